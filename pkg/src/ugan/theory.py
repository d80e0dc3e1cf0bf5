"""Exact finite-support oracle for the game's equilibrium and EM claims.

Everything here works on small categorical tables, where every expectation
is a finite sum, so each claim becomes a numeric identity:

  * the discriminator's closed-form best response p_l / (p_l + mix)
    against a per-cell golden-section minimization of its objective;
  * the equilibrium characterization: both generator joints equal the
    labeled joint.  The value function's cross-entropy terms hide a
    generator-dependent entropy, so the search minimizes an explicit
    nonnegative gap (2 JSD + a mixture KL) that is zero exactly at the
    equilibrium point;
  * the fake-class head: with disjoint unlabeled/generated supports the
    optimum is 0 on unlabeled mass, 1 on generated mass, objective 0,
    and K-logit gradient descent reaches it;
  * the EM construction: the marginal KL to the target conditional is
    non-increasing, sandwiched by the completed-data KL.
"""

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from . import autodiff as ad
from .errors import DomainError

_DIST_ATOL = 1e-9


def _validate_dist(p, name):
    p = np.asarray(p, dtype=np.float64)
    if p.size == 0:
        raise DomainError(f"{name}: empty distribution")
    if np.min(p) < 0.0:
        raise DomainError(f"{name}: negative probability")
    if abs(p.sum() - 1.0) > _DIST_ATOL:
        raise DomainError(f"{name}: probabilities sum to {p.sum()!r}, not 1")
    return p


def _validate_rows(p, name):
    p = np.asarray(p, dtype=np.float64)
    if np.min(p) < 0.0:
        raise DomainError(f"{name}: negative probability")
    if not np.allclose(p.sum(axis=-1), 1.0, atol=_DIST_ATOL, rtol=0):
        raise DomainError(f"{name}: rows must each sum to 1")
    return p


def kl(p, q):
    """KL(p || q) with the 0 log 0 = 0 convention; inf if q lacks support."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    if p.shape != q.shape:
        raise DomainError(f"KL needs matching shapes, got {p.shape} and {q.shape}")
    mask = p > 0.0
    if np.any(q[mask] == 0.0):
        return np.inf
    return float(np.sum(p[mask] * (np.log(p[mask]) - np.log(q[mask]))))


def jsd(p, q):
    """Jensen-Shannon divergence (natural log); bounded by log 2."""
    p = np.asarray(p, dtype=np.float64).ravel()
    q = np.asarray(q, dtype=np.float64).ravel()
    m = 0.5 * (p + q)
    return 0.5 * kl(p, m) + 0.5 * kl(q, m)


def entropy(p):
    p = np.asarray(p, dtype=np.float64).ravel()
    mask = p > 0.0
    return float(-np.sum(p[mask] * np.log(p[mask])))


def conditional_entropy(joint):
    """H(Y | X) of a joint (nx, ny) table."""
    joint = _validate_dist(joint, "joint")
    return entropy(joint) - entropy(joint.sum(axis=1))


def chain_rule_residual(p, q):
    """KL(P(X,Z)||Q(X,Z)) - KL(P(X)||Q(X)) - E_x KL(P(Z|x)||Q(Z|x)).

    Zero for any pair of joints over (X, Z) with full support; the first
    axis is X, the rest is Z.
    """
    p = _validate_dist(p, "p")
    q = _validate_dist(np.asarray(q, dtype=np.float64), "q")
    if p.shape != q.shape:
        raise DomainError(f"joints must share a shape, got {p.shape} and {q.shape}")
    total = kl(p, q)
    px = p.reshape(p.shape[0], -1).sum(axis=1)
    qx = q.reshape(q.shape[0], -1).sum(axis=1)
    marginal = kl(px, qx)
    cond = 0.0
    for i in range(p.shape[0]):
        if px[i] > 0.0:
            cond += px[i] * kl(p[i] / px[i], q[i] / qx[i])
    return total - marginal - cond


# ---------------------------------------------------------------------------
# discriminator best response

def optimal_discriminator(p_l, p_gg, p_c):
    """Closed form p_l / (p_l + half-mix); NaN where no player puts mass."""
    p_l = _validate_dist(p_l, "p_l")
    p_gg = _validate_dist(np.asarray(p_gg, dtype=np.float64), "p_gg")
    p_c = _validate_dist(np.asarray(p_c, dtype=np.float64), "p_c")
    if not (p_l.shape == p_gg.shape == p_c.shape):
        raise DomainError("the three joints must share a shape")
    denom = p_l + 0.5 * p_gg + 0.5 * p_c
    with np.errstate(invalid="ignore", divide="ignore"):
        out = np.where(denom > 0.0, p_l / np.where(denom > 0.0, denom, 1.0), np.nan)
    return out


def discriminator_cell_loss(pl, pf, d):
    """Per-cell negative payoff: -(pl log d + pf log(1-d)); pf is the half-mix."""
    return -(pl * np.log(d) + pf * np.log1p(-d))


def golden_section_min(f, lo, hi, tol=1e-10):
    """Bounded golden-section minimization of a unimodal scalar function."""
    inv_phi = (np.sqrt(5.0) - 1.0) / 2.0
    a, b = float(lo), float(hi)
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc < fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def discriminator_best_response(p_l, p_gg, p_c, tol=1e-10):
    """Numeric route: golden-section per cell on the discriminator loss."""
    p_l = _validate_dist(p_l, "p_l")
    p_gg = np.asarray(p_gg, dtype=np.float64)
    p_c = np.asarray(p_c, dtype=np.float64)
    half_mix = 0.5 * p_gg + 0.5 * p_c
    out = np.full(p_l.shape, np.nan)
    it = np.nditer(p_l, flags=["multi_index"])
    for pl in it:
        idx = it.multi_index
        pf = half_mix[idx]
        if pl == 0.0 and pf == 0.0:
            continue
        out[idx] = golden_section_min(
            lambda d: discriminator_cell_loss(float(pl), float(pf), d),
            1e-12, 1.0 - 1e-12, tol,
        )
    return out


# ---------------------------------------------------------------------------
# equilibrium of the generator/classifier block

def value_function(p_l, g, c):
    """-log4 + 2 JSD(p_l, mix) + labeled CE + generated-pair CE.

    g is the good-generator joint; c the classifier conditional.  The
    classifier's pair joint is data-marginal times c.
    """
    p_l = _validate_dist(p_l, "p_l")
    g = _validate_dist(np.asarray(g, dtype=np.float64), "g")
    c = _validate_rows(c, "c")
    q = p_l.sum(axis=1, keepdims=True) * c
    mix = 0.5 * g + 0.5 * q
    d_part = -np.log(4.0) + 2.0 * jsd(p_l, mix)
    with np.errstate(divide="ignore"):
        logc = np.where(c > 0.0, np.log(np.where(c > 0.0, c, 1.0)), -np.inf)
    ce_labeled = float(-np.sum(np.where(p_l > 0.0, p_l * logc, 0.0)))
    ce_generated = float(-np.sum(np.where(g > 0.0, g * logc, 0.0)))
    return d_part + ce_labeled + ce_generated


def equilibrium_gap(p_l, g, c, beta=0.5):
    """Nonnegative; zero iff g and the classifier joint both equal p_l.

    gap = 2 JSD(p_l, (g + q)/2) + KL(beta p_l + (1-beta) g || q), with
    q = data-marginal times c.  Joint convexity in (g, q) makes the
    coordinate search below a certificate rather than a hope.
    """
    p_l = _validate_dist(p_l, "p_l")
    g = _validate_dist(np.asarray(g, dtype=np.float64), "g")
    c = _validate_rows(c, "c")
    if not 0.0 <= beta <= 1.0:
        raise DomainError(f"beta must lie in [0, 1], got {beta}")
    q = p_l.sum(axis=1, keepdims=True) * c
    mix = 0.5 * g + 0.5 * q
    blend = beta * p_l + (1.0 - beta) * g
    return 2.0 * jsd(p_l, mix) + kl(blend, q)


@dataclass(frozen=True)
class EquilibriumResult:
    g: np.ndarray
    c: np.ndarray
    gap: float
    tv_g: float  # total variation between g and p_l
    tv_c: float  # total variation between the classifier joint and p_l


def equilibrium_search(p_l, beta=0.5, seed=0, n_starts=2, maxiter=3000):
    """Minimize the equilibrium gap over (g, c) via L-BFGS on logits.

    Recovers g = classifier-joint = p_l; returns the best of n_starts.
    """
    p_l = _validate_dist(p_l, "p_l")
    nx, ny = p_l.shape
    x_marg = p_l.sum(axis=1, keepdims=True)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 505]))

    def unpack(v):
        gl = v[: nx * ny].reshape(nx, ny)
        cl = v[nx * ny :].reshape(nx, ny)
        ge = np.exp(gl - gl.max())
        g = ge / ge.sum()
        ce = np.exp(cl - cl.max(axis=1, keepdims=True))
        c = ce / ce.sum(axis=1, keepdims=True)
        return g, c

    def objective(v):
        g, c = unpack(v)
        return equilibrium_gap(p_l, g, c, beta)

    best = None
    for _ in range(n_starts):
        v0 = rng.normal(scale=0.5, size=2 * nx * ny)
        res = minimize(objective, v0, method="L-BFGS-B",
                       options={"maxiter": maxiter, "ftol": 1e-16, "gtol": 1e-12})
        if best is None or res.fun < best.fun:
            best = res
    g, c = unpack(best.x)
    q = x_marg * c
    return EquilibriumResult(
        g=g, c=c, gap=float(best.fun),
        tv_g=0.5 * float(np.abs(g - p_l).sum()),
        tv_c=0.5 * float(np.abs(q - p_l).sum()),
    )


# ---------------------------------------------------------------------------
# fake-class head

def fake_head_optimum(w_u, w_b):
    """Pointwise optimum of -w_u log(1-p) - w_b log(p).

    Returns (p_star, objective).  Disjoint supports give p in {0, 1} and
    an exactly zero objective.
    """
    w_u = np.asarray(w_u, dtype=np.float64)
    w_b = np.asarray(w_b, dtype=np.float64)
    if w_u.shape != w_b.shape:
        raise DomainError("weight vectors must share a shape")
    if np.min(w_u) < 0 or np.min(w_b) < 0:
        raise DomainError("weights must be nonnegative")
    total = w_u + w_b
    if np.any(total == 0.0):
        raise DomainError("each point needs unlabeled or generated mass")
    p = w_b / total
    with np.errstate(divide="ignore", invalid="ignore"):
        term_u = np.where(w_u > 0.0, -w_u * np.log1p(-p), 0.0)
        term_b = np.where(w_b > 0.0, -w_b * np.log(np.where(w_b > 0.0, p, 1.0)), 0.0)
    return p, float(np.sum(term_u + term_b))


def fake_head_objective(logits, w_u, w_b):
    """The same objective through the K-logit parameterization (autodiff)."""
    z = ad.lse(logits)
    real_nll = ad.sub(ad.softplus(z), z)  # -log(1 - p_fake)
    fake_nll = ad.softplus(z)             # -log p_fake
    return ad.add(
        ad.sum(ad.mul(real_nll, ad.Tensor(w_u))),
        ad.sum(ad.mul(fake_nll, ad.Tensor(w_b))),
    )


def fake_head_descent(w_u, w_b, k=10, steps=8000, lr=10.0, seed=0):
    """Plain gradient descent on K logits per point; returns p_fake.

    The softmax Jacobian spreads the LSE gradient over the k logits, so
    the step size is scaled up accordingly; boundary optima (p in {0,1})
    are only approached as the logits diverge, hence the long horizon.
    """
    w_u = np.asarray(w_u, dtype=np.float64)
    w_b = np.asarray(w_b, dtype=np.float64)
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 606]))
    logits = ad.Tensor(rng.normal(scale=0.1, size=(w_u.size, k)), requires_grad=True)
    for _ in range(steps):
        with ad.Tape():
            loss = fake_head_objective(logits, w_u, w_b)
        ad.backward(loss)
        logits.data -= lr * logits.grad
        logits.grad = None
    from . import backend

    z, _ = backend.lse_rows(logits.data)
    return backend.sigmoid_fwd(-z)


# ---------------------------------------------------------------------------
# EM construction

@dataclass(frozen=True)
class EMProblem:
    """Finite EM instance: observe (x, y_l); latent (x_g, y_g, y_u).

    The model factorizes as theta(y_l|x) * kernel(x_g,y_g | x,y_u) *
    theta(y_u|x); the target is the conditional the marginal term chases.
    """

    x_weights: np.ndarray  # (nx,)
    target: np.ndarray     # (nx, k) target conditional t(y_l | x)
    kernel: np.ndarray     # (nx, k, nx, k): (x, y_u) -> joint over (x_g, y_g)

    def __post_init__(self):
        _validate_dist(self.x_weights, "x_weights")
        _validate_rows(self.target, "target")
        nx, k = self.target.shape
        if self.kernel.shape != (nx, k, nx, k):
            raise DomainError(
                f"kernel must be shaped (nx, k, nx, k) = {(nx, k, nx, k)}, got {self.kernel.shape}"
            )
        flat = self.kernel.reshape(nx, k, nx * k)
        if not np.allclose(flat.sum(axis=2), 1.0, atol=_DIST_ATOL, rtol=0):
            raise DomainError("kernel slices must be normalized over (x_g, y_g)")


def random_em_problem(rng, nx=4, k=3):
    x_weights = rng.dirichlet(np.ones(nx))
    target = rng.dirichlet(np.ones(k), size=nx)
    kernel = rng.dirichlet(np.ones(nx * k), size=(nx, k)).reshape(nx, k, nx, k)
    return EMProblem(x_weights=x_weights, target=target, kernel=kernel)


def em_marginal_kl(problem, theta):
    """J(theta) = E_x KL(target(.|x) || theta(.|x))."""
    theta = _validate_rows(theta, "theta")
    out = 0.0
    for i, w in enumerate(problem.x_weights):
        out += w * kl(problem.target[i], theta[i])
    return out


def _model_joint(problem, theta):
    """p_theta(y_l, x_g, y_g, y_u | x): shape (nx, k, nx, k, k)."""
    # axes: x, y_l, x_g, y_g, y_u
    return np.einsum("xl,xugh,xu->xlghu", theta, problem.kernel, theta, optimize=True)


def _completed_joint(problem, theta_old):
    """target(y_l|x) * posterior_old(Z|x), same shape as the model joint."""
    return np.einsum("xl,xugh,xu->xlghu", problem.target, problem.kernel, theta_old, optimize=True)


def em_completed_kl(problem, theta_new, theta_old):
    """J(theta_new, q_old): full-summation KL over the completed data."""
    completed = _completed_joint(problem, theta_old)
    model = _model_joint(problem, theta_new)
    out = 0.0
    for i, w in enumerate(problem.x_weights):
        out += w * kl(completed[i], model[i])
    return out


def em_m_step(problem, theta_old):
    """Maximize the completed-data likelihood by expected-count accumulation.

    Counts: target supplies the observed y_l mass, the old posterior the
    latent y_u mass (marginalized over x_g, y_g by direct summation).
    """
    theta_old = _validate_rows(theta_old, "theta")
    # q_old(x_g, y_g, y_u | x) summed over (x_g, y_g) leaves theta_old's rows,
    # but compute it honestly from the full posterior tensor
    posterior = np.einsum("xugh,xu->xghu", problem.kernel, theta_old, optimize=True)
    latent_counts = posterior.sum(axis=(1, 2))
    counts = problem.target + latent_counts
    return counts / counts.sum(axis=1, keepdims=True)


@dataclass
class EMTrace:
    thetas: list
    marginal_kls: list   # J(theta_s), length n_steps + 1
    completed_kls: list  # J(theta_{s+1}, q_s), length n_steps


def em_iterate(problem, theta0, n_steps):
    """Alternate E and M steps, recording the sandwich quantities."""
    theta = _validate_rows(theta0, "theta0")
    trace = EMTrace(thetas=[theta], marginal_kls=[em_marginal_kl(problem, theta)], completed_kls=[])
    for _ in range(n_steps):
        theta_next = em_m_step(problem, theta)
        trace.completed_kls.append(em_completed_kl(problem, theta_next, theta))
        trace.thetas.append(theta_next)
        trace.marginal_kls.append(em_marginal_kl(problem, theta_next))
        theta = theta_next
    return trace


# ---------------------------------------------------------------------------
# the oracle suite (shared by tests and the verify-theory command)

@dataclass(frozen=True)
class CheckResult:
    name: str
    passed: bool
    residual: float
    tolerance: float
    detail: str = ""


def _random_joint(rng, nx, ny):
    return rng.dirichlet(np.ones(nx * ny)).reshape(nx, ny)


def verify_suite(trials=20, seed=0):
    """Run every theory check; returns a list of CheckResults."""
    rng = np.random.default_rng(np.random.SeedSequence([int(seed), 707]))
    results = []

    # closed-form discriminator vs golden section
    worst = 0.0
    for _ in range(trials):
        nx = int(rng.integers(2, 13))
        ny = int(rng.integers(2, 5))
        p_l = _random_joint(rng, nx, ny)
        p_g = _random_joint(rng, nx, ny)
        p_c = _random_joint(rng, nx, ny)
        closed = optimal_discriminator(p_l, p_g, p_c)
        numeric = discriminator_best_response(p_l, p_g, p_c)
        mask = ~np.isnan(closed)
        worst = max(worst, float(np.max(np.abs(closed[mask] - numeric[mask]))))
    results.append(CheckResult("discriminator-closed-form-vs-golden-section", worst < 1e-6, worst, 1e-6))

    # equal inputs pin the response at exactly one half
    p = _random_joint(rng, 5, 3)
    d_eq = optimal_discriminator(p, p, p)
    resid = float(np.max(np.abs(d_eq - 0.5)))
    results.append(CheckResult("discriminator-equal-inputs-exactly-half", resid == 0.0, resid, 0.0))

    # equilibrium search recovers the labeled joint
    worst_tv = 0.0
    for i in range(max(3, trials // 4)):
        p_l = _random_joint(rng, 3, 3)
        res = equilibrium_search(p_l, beta=0.5, seed=int(rng.integers(2**31)))
        worst_tv = max(worst_tv, res.tv_g, res.tv_c)
    results.append(CheckResult("equilibrium-search-recovers-labeled-joint", worst_tv < 1e-3, worst_tv, 1e-3))

    # value function at the equilibrium point
    worst = 0.0
    for _ in range(trials):
        p_l = _random_joint(rng, 4, 3)
        cond = p_l / p_l.sum(axis=1, keepdims=True)
        v = value_function(p_l, p_l, cond)
        expected = -np.log(4.0) + 2.0 * conditional_entropy(p_l)
        worst = max(worst, abs(v - expected))
    results.append(CheckResult("value-at-equilibrium-closed-form", worst < 1e-10, worst, 1e-10))

    # fake head: disjoint supports, exact zero
    worst = 0.0
    for _ in range(trials):
        n = int(rng.integers(4, 9))
        w_u = np.where(np.arange(n) % 2 == 0, rng.uniform(0.1, 1.0, n), 0.0)
        w_b = np.where(np.arange(n) % 2 == 1, rng.uniform(0.1, 1.0, n), 0.0)
        _, obj = fake_head_optimum(w_u, w_b)
        worst = max(worst, abs(obj))
    results.append(CheckResult("fake-head-disjoint-objective-exactly-zero", worst == 0.0, worst, 0.0))

    # fake head: K-logit descent reaches the closed form
    w_u = np.array([1.0, 0.0, 0.7, 0.0, 0.25])
    w_b = np.array([0.0, 1.0, 0.3, 0.5, 0.75])
    p_star, _ = fake_head_optimum(w_u, w_b)
    p_gd = fake_head_descent(w_u, w_b, k=10, seed=seed)
    resid = float(np.max(np.abs(p_gd - p_star)))
    results.append(CheckResult("fake-head-k-logit-descent", resid < 1e-3, resid, 1e-3))

    # EM: monotone marginal KL and the sandwich, 50 iterations each
    worst_mono = -np.inf
    worst_sand = -np.inf
    for _ in range(max(20, trials)):
        problem = random_em_problem(rng, nx=int(rng.integers(2, 5)), k=int(rng.integers(2, 4)))
        theta0 = rng.dirichlet(np.ones(problem.target.shape[1]), size=problem.target.shape[0])
        trace = em_iterate(problem, theta0, 50)
        diffs = np.diff(trace.marginal_kls)
        worst_mono = max(worst_mono, float(diffs.max()))
        for s in range(len(trace.completed_kls)):
            j_next = trace.marginal_kls[s + 1]
            j_mid = trace.completed_kls[s]
            j_prev = trace.marginal_kls[s]
            worst_sand = max(worst_sand, j_next - j_mid, j_mid - j_prev)
    results.append(CheckResult("em-marginal-kl-non-increasing", worst_mono <= 1e-12, worst_mono, 1e-12))
    results.append(CheckResult("em-sandwich-inequalities", worst_sand <= 1e-12, worst_sand, 1e-12))

    # chain rule of KL on (X, Z) joints with Z of shape (3, 2)
    worst = 0.0
    for _ in range(trials):
        p = rng.dirichlet(np.ones(24)).reshape(4, 3, 2)
        q = rng.dirichlet(np.ones(24)).reshape(4, 3, 2)
        worst = max(worst, abs(chain_rule_residual(p, q)))
    results.append(CheckResult("kl-chain-rule-residual", worst < 1e-12, worst, 1e-12))

    return results
