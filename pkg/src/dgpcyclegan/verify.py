"""Self-contained verification suites behind the `verify` CLI command.

Each suite cross-checks an optimized code path against an independent route:
hand-derived values, brute-force joint-Gaussian conditioning through an
explicit dense inverse, eigenvalue log-determinants, and central finite
differences for every gradient.  Suites only ever touch the filesystem
through a temporary directory.
"""

from __future__ import annotations

import tempfile
from pathlib import Path
from typing import Callable, NamedTuple

import numpy as np

from . import gp_supervisor
from .data_metrics import DegradeSpec, Patch, degrade, make_clean, psnr, read_pgm, ssim, streak_field, write_pgm
from .errors import MalformedFile, NotPositiveDefinite, NotSymmetric
from .gp_supervisor import FeatureBank, GpPosterior, gp_condition, pseudo_loss
from .kernels import KernelSpec, base_kernel, effective_kernel, gram
from .linalg import cholesky, logdet, solve_posdef
from .nets import Discriminator, Generator
from .trainer import generator_step_terms


class CheckResult(NamedTuple):
    name: str
    ok: bool
    detail: str


def _rel(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(float(np.linalg.norm(a)), float(np.linalg.norm(b)), 1e-300)
    return float(np.linalg.norm(a - b)) / denom


def fd_grad(fun: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-6) -> np.ndarray:
    """Central finite differences of a scalar function, one coordinate at a time."""
    g = np.zeros_like(x)
    for i in range(x.size):
        xp = x.copy()
        xm = x.copy()
        xp[i] += h
        xm[i] -= h
        g[i] = (fun(xp) - fun(xm)) / (2.0 * h)
    return g


def brute_force_condition(spec: KernelSpec, s_rows: np.ndarray, z_rows: np.ndarray, query_s: np.ndarray):
    """Condition the full joint Gaussian with an explicit dense inverse.

    Builds the (n+1)-point joint covariance with the noise on the whole
    diagonal and reads the conditional mean and variance off the blocks.
    Independent of the Cholesky route used by gp_condition.
    """
    n = s_rows.shape[0]
    stacked = np.vstack([s_rows, query_s])
    joint = gram(spec, stacked, stacked) + spec.noise_var * np.eye(n + 1)
    k_bb = joint[:n, :n]
    k_bq = joint[:n, n]
    inv = np.linalg.inv(k_bb)
    mean = k_bq @ inv @ (z_rows - spec.prior_mean) + spec.prior_mean
    var = float(joint[n, n] - k_bq @ inv @ k_bq)
    return mean, var


# --- suites ----------------------------------------------------------------


def linalg_suite() -> list:
    out = []
    rng = np.random.default_rng(101)

    f = cholesky(np.eye(2))
    out.append(CheckResult("identity factorization", np.allclose(f.lower, np.eye(2)) and f.jitter_used == 0.0, "L == I, jitter 0"))

    f = cholesky(np.array([[4.0, 2.0], [2.0, 3.0]]))
    expect = np.array([[2.0, 0.0], [1.0, np.sqrt(2.0)]])
    out.append(CheckResult("hand 2x2 factorization", float(np.max(np.abs(f.lower - expect))) < 1e-12, "L == [[2,0],[1,sqrt(2)]]"))

    try:
        cholesky(np.diag([1.0, -1.0]))
        out.append(CheckResult("indefinite rejected", False, "no error raised"))
    except NotPositiveDefinite:
        out.append(CheckResult("indefinite rejected", True, "NotPositiveDefinite"))

    try:
        cholesky(np.array([[1.0, 0.5], [0.0, 1.0]]))
        out.append(CheckResult("asymmetric rejected", False, "no error raised"))
    except NotSymmetric:
        out.append(CheckResult("asymmetric rejected", True, "NotSymmetric"))

    x = solve_posdef(cholesky(np.array([[4.0, 2.0], [2.0, 3.0]])), np.array([1.0, 0.0]))
    out.append(CheckResult("hand 2x2 solve", float(np.max(np.abs(x - [0.375, -0.25]))) < 1e-12, "x == (0.375, -0.25)"))

    worst = 0.0
    for _ in range(200):
        n = int(rng.integers(1, 17))
        b_mat = rng.standard_normal((n, n))
        a = b_mat.T @ b_mat + np.eye(n)
        rhs = rng.standard_normal(n)
        f = cholesky(a)
        x = solve_posdef(f, rhs)
        res = np.linalg.norm((a + f.jitter_used * np.eye(n)) @ x - rhs)
        worst = max(worst, res / (1.0 + np.linalg.norm(rhs)))
    out.append(CheckResult("solve residuals (200 random)", worst <= 1e-8, f"worst rel residual {worst:.2e}"))

    worst = 0.0
    for n in range(1, 17):
        b_mat = rng.standard_normal((n, n))
        a = b_mat.T @ b_mat + np.eye(n)
        f = cholesky(a)
        recon = f.lower @ f.lower.T - (a + f.jitter_used * np.eye(n))
        worst = max(worst, float(np.max(np.abs(recon))) / float(np.max(np.abs(a))))
    out.append(CheckResult("factor round-trip (dims 1..16)", worst <= 1e-10, f"worst scaled error {worst:.2e}"))

    ok = abs(logdet(cholesky(np.eye(4)))) < 1e-14
    ok = ok and abs(logdet(cholesky(np.diag([2.0, 3.0]))) - np.log(6.0)) < 1e-12
    worst = 0.0
    for _ in range(20):
        b_mat = rng.standard_normal((5, 5))
        a = b_mat.T @ b_mat + np.eye(5)
        f = cholesky(a)
        eig = float(np.sum(np.log(np.linalg.eigvalsh(a))))
        worst = max(worst, abs(logdet(f) - eig) / abs(eig))
        inv = solve_posdef(f, np.eye(5))
        worst = max(worst, abs(logdet(f) + logdet(cholesky(0.5 * (inv + inv.T)))))
    out.append(CheckResult("logdet identities", ok and worst <= 1e-8, f"worst error {worst:.2e}"))
    return out


def kernels_suite() -> list:
    out = []
    rng = np.random.default_rng(202)
    spec1 = KernelSpec.homogeneous(depth=1)

    x = np.array([1.0, 0.0])
    y = np.array([0.0, 1.0])  # squared distance exactly 2
    out.append(CheckResult("SE zero distance", base_kernel(spec1, 0, x, x) == 1.0, "k(x,x) == 1"))
    out.append(CheckResult("SE at squared distance 2", abs(base_kernel(spec1, 0, x, y) - np.exp(-1.0)) < 1e-15, "k == exp(-1)"))

    ok = True
    for fam in ("se", "lin", "sc"):
        spec = KernelSpec.homogeneous(family=fam, depth=1, beta=1.3, gamma=0.7)
        for _ in range(10):
            u, v = rng.standard_normal((2, 5))
            ok = ok and base_kernel(spec, 0, u, v) == base_kernel(spec, 0, v, u)
    out.append(CheckResult("symmetry in (x, y)", ok, "all families"))

    spec = KernelSpec.homogeneous(depth=1, beta=1.7, gamma=0.9)
    worst = max(
        abs(effective_kernel(spec, u, v) - base_kernel(spec, 0, u, v))
        for u, v in (rng.standard_normal((2, 4)) for _ in range(10))
    )
    out.append(CheckResult("depth-1 equals base kernel", worst <= 1e-15, f"max diff {worst:.1e}"))

    ok = True
    for depth in (1, 2, 3, 4):
        spec = KernelSpec(
            families=("se",) * depth,
            beta=tuple(0.8 + 0.2 * i for i in range(depth)),
            gamma=tuple(1.1 + 0.1 * i for i in range(depth)),
        )
        v = rng.standard_normal(6)
        ok = ok and abs(effective_kernel(spec, v, v) - spec.signal_var) <= 1e-12
    out.append(CheckResult("self-similarity equals beta_L^2", ok, "depths 1..4"))

    spec2 = KernelSpec.homogeneous(depth=2)
    val = effective_kernel(spec2, x, y)
    out.append(CheckResult("depth-2 hand value", abs(val - 0.664567) < 1e-6, f"{val:.6f} vs 0.664567"))

    spec4 = KernelSpec.homogeneous(depth=4)
    ok = True
    max_jitter = 0.0
    for _ in range(100):
        n = int(rng.integers(2, 33))
        d = int(rng.integers(1, 65))
        rows = rng.standard_normal((n, d))
        k = gram(spec4, rows, rows)
        if not np.array_equal(k, k.T):
            ok = False
        f = cholesky(k + spec4.noise_var * np.eye(n))
        max_jitter = max(max_jitter, f.jitter_used)
    out.append(CheckResult("gram + noise is PD (100 sets)", ok and max_jitter == 0.0, f"max jitter {max_jitter:g}"))

    base_v = np.zeros(3)
    dists = np.linspace(0.1, 4.0, 15)
    vals = [effective_kernel(spec4, base_v, np.array([d, 0.0, 0.0])) for d in dists]
    mono = all(a > b for a, b in zip(vals, vals[1:]))
    bounded = all(0.0 < v <= 1.0 for v in vals)
    out.append(CheckResult("SE monotone decreasing and in (0, 1]", mono and bounded, "15 sorted distances"))
    return out


def gp_suite() -> list:
    out = []
    rng = np.random.default_rng(303)
    spec1 = KernelSpec.homogeneous(depth=1)

    z = np.array([0.5, -2.0])
    bank = FeatureBank("clean", s=np.array([[1.0, 2.0]]), z=z[None, :])
    post = gp_condition(spec1, bank, [0], np.array([1.0, 2.0]))
    ok = np.allclose(post.pseudo_label, z / 1.01, atol=1e-12)
    ok = ok and abs(post.variance - (1.0 - 1.0 / 1.01 + 0.01)) < 1e-12
    out.append(CheckResult("one-point closed form", ok, "mean z/1.01, var 0.019901"))

    spec0 = KernelSpec.homogeneous(depth=1, noise_var=0.0)
    post = gp_condition(spec0, bank, [0], np.array([1.0, 2.0]))
    out.append(CheckResult("noiseless interpolation", bool(np.all(post.pseudo_label == z)), "pseudo-label equals stored z"))

    spec4 = KernelSpec.homogeneous(depth=4)
    worst = 0.0
    for _ in range(100):
        n = int(rng.integers(1, 17))
        ds = int(rng.integers(1, 9))
        dz = int(rng.integers(1, 9))
        s_rows = rng.standard_normal((n, ds))
        z_rows = rng.standard_normal((n, dz))
        q = rng.standard_normal(ds)
        bank = FeatureBank("clean", s=s_rows, z=z_rows)
        post = gp_condition(spec4, bank, np.arange(n), q)
        mean, var = brute_force_condition(spec4, s_rows, z_rows, q)
        worst = max(worst, _rel(post.pseudo_label, mean), abs(post.variance - var) / max(abs(var), 1e-300))
    out.append(CheckResult("brute-force oracle equivalence (100)", worst <= 1e-8, f"worst rel err {worst:.2e}"))

    s_rows = rng.standard_normal((8, 4))
    z_rows = rng.standard_normal((8, 3))
    q = rng.standard_normal(4)
    bank = FeatureBank("clean", s=s_rows, z=z_rows)
    post_a = gp_condition(spec4, bank, np.arange(8), q)
    perm = rng.permutation(8)
    bank_p = FeatureBank("clean", s=s_rows[perm], z=z_rows[perm])
    post_b = gp_condition(spec4, bank_p, np.arange(8), q)
    ok = float(np.max(np.abs(post_a.pseudo_label - post_b.pseudo_label))) <= 1e-12
    ok = ok and abs(post_a.variance - post_b.variance) <= 1e-12
    out.append(CheckResult("permutation invariance", ok, "mean and variance stable"))

    ok = True
    for _ in range(20):
        n = int(rng.integers(2, 10))
        s_rows = rng.standard_normal((n, 3))
        z_rows = rng.standard_normal((n, 2))
        q = rng.standard_normal(3)
        bank = FeatureBank("clean", s=s_rows, z=z_rows)
        prev = None
        for m in range(1, n + 1):
            post = gp_condition(spec4, bank, np.arange(m), q)
            cap = spec4.signal_var + spec4.noise_var
            ok = ok and spec4.noise_var - 1e-12 <= post.variance <= cap + 1e-9
            if prev is not None:
                ok = ok and post.variance <= prev + 1e-10
            prev = post.variance
    out.append(CheckResult("variance bounds and reduction", ok, "nested neighbor sets"))

    post = GpPosterior(pseudo_label=np.zeros(2), variance=0.5, neighbor_ids=np.arange(1))
    hand = pseudo_loss(post, np.array([1.0, 1.0]))
    ok = abs(hand - (4.0 + 2.0 * np.log(0.5))) < 1e-12
    vs = [pseudo_loss(GpPosterior(np.zeros(2), v, np.arange(1)), np.array([1.0, 1.0])) - 2 * np.log(v) for v in (0.25, 0.5, 1.0, 2.0)]
    ok = ok and all(a > b for a, b in zip(vs, vs[1:]))
    out.append(CheckResult("pseudo-loss value and multiplier", ok, "hand value, 1/var weighting"))
    return out


def grads_suite() -> list:
    out = []
    rng = np.random.default_rng(404)

    worst = 0.0
    for _ in range(50):
        d = int(rng.integers(1, 9))
        post = GpPosterior(
            pseudo_label=rng.standard_normal(d),
            variance=float(rng.uniform(0.05, 3.0)),
            neighbor_ids=np.arange(1),
        )
        z = rng.standard_normal(d)
        analytic = gp_supervisor.pseudo_loss_grad(post, z)
        numeric = fd_grad(lambda v: pseudo_loss(post, v), z.copy())
        worst = max(worst, _rel(analytic, numeric))
    out.append(CheckResult("pseudo-loss gradient vs FD (50)", worst < 1e-6, f"worst rel err {worst:.2e}"))

    gen = Generator(9, hidden=(5, 4, 4, 5), tap_s=2, tap_z=3, rng=rng)
    x = rng.standard_normal(9)
    wy = rng.standard_normal(9)
    ws = rng.standard_normal(4)
    wz = rng.standard_normal(4)

    def gen_scalar(params):
        gen.params = params
        y, s, z, _ = gen.forward(x)
        return float(wy @ y.reshape(-1) + ws @ s + wz @ z)

    base = gen.params.copy()
    _, s0, z0, cache = gen.forward(x)
    analytic, _ = gen.backward(cache, wy, grad_s=ws, grad_z=wz)
    numeric = fd_grad(gen_scalar, base.copy())
    gen.params = base
    rel = _rel(analytic, numeric)
    out.append(CheckResult("generator backward vs FD", rel < 1e-4, f"rel err {rel:.2e}"))

    disc = Discriminator(9, hidden=(5,), rng=rng)
    xd = rng.standard_normal(9)

    def disc_scalar(params):
        disc.params = params
        score, _ = disc.forward(xd)
        return score

    base_d = disc.params.copy()
    _, cache = disc.forward(xd)
    analytic, _ = disc.backward(cache, 1.0)
    numeric = fd_grad(disc_scalar, base_d.copy())
    disc.params = base_d
    rel = _rel(analytic, numeric)
    out.append(CheckResult("discriminator backward vs FD", rel < 1e-4, f"rel err {rel:.2e}"))

    rel = max(end_to_end_grad_error(seed) for seed in range(5))
    out.append(CheckResult("composite objective vs FD (5 seeds)", rel < 1e-3, f"worst rel err {rel:.2e}"))

    spec = KernelSpec.homogeneous(depth=3)
    s_rows = rng.standard_normal((6, 4)) * 0.7
    z_rows = rng.standard_normal((6, 3))
    bank = FeatureBank("clean", s=s_rows, z=z_rows)
    q = rng.standard_normal(4) * 0.7
    z_pred = rng.standard_normal(3)
    ids = np.arange(6)

    def query_loss(qv):
        post = gp_condition(spec, bank, ids, qv)
        return pseudo_loss(post, z_pred)

    post = gp_condition(spec, bank, ids, q)
    analytic = gp_supervisor.pseudo_loss_query_grad(spec, bank, post, q, z_pred)
    numeric = fd_grad(query_loss, q.copy())
    rel = _rel(analytic, numeric)
    out.append(CheckResult("query-gradient toggle vs FD", rel < 1e-5, f"rel err {rel:.2e}"))
    return out


def end_to_end_grad_error(seed: int) -> float:
    """Composite-objective gradient vs FD on a tiny two-generator model.

    Posterior targets are frozen at the base parameters, exactly as a
    training step treats them.
    """
    rng = np.random.default_rng(1000 + seed)
    side = 4
    gen_wc = Generator(side * side, hidden=(4, 3, 3, 4), tap_s=2, tap_z=3, rng=rng)
    gen_cw = Generator(side * side, hidden=(4, 3, 3, 4), tap_s=2, tap_z=3, rng=rng)
    disc_c = Discriminator(side * side, hidden=(4,), rng=rng)
    disc_w = Discriminator(side * side, hidden=(4,), rng=rng)
    iw = rng.uniform(0.0, 1.0, (side, side))
    ic = rng.uniform(0.0, 1.0, (side, side))
    lam = 0.05

    posts = (
        GpPosterior(rng.standard_normal(3) * 0.3, float(rng.uniform(0.2, 1.5)), np.arange(1)),
        GpPosterior(rng.standard_normal(3) * 0.3, float(rng.uniform(0.2, 1.5)), np.arange(1)),
    )

    n_wc = gen_wc.n_params

    def composite(theta):
        gen_wc.params = theta[:n_wc]
        gen_cw.params = theta[n_wc:]
        comps, _, _, _, _ = generator_step_terms(
            gen_wc, gen_cw, disc_c, disc_w, iw, ic,
            lambda_p=lam, fixed_posteriors=posts, want_grads=False,
        )
        return (comps["cyc_w"] + comps["cyc_c"] + comps["adv_fwd"] + comps["adv_rev"]
                + comps["identity"] + lam * (comps["p_fwd"] + comps["p_rev"]))

    base = np.concatenate([gen_wc.params, gen_cw.params])
    _, g_wc, g_cw, _, _ = generator_step_terms(
        gen_wc, gen_cw, disc_c, disc_w, iw, ic,
        lambda_p=lam, fixed_posteriors=posts,
    )
    analytic = np.concatenate([g_wc, g_cw])
    numeric = fd_grad(composite, base.copy(), h=1e-6)
    gen_wc.params = base[:n_wc]
    gen_cw.params = base[n_wc:]
    return _rel(analytic, numeric)


def metrics_suite() -> list:
    out = []
    rng = np.random.default_rng(505)

    a = np.full((16, 16), 0.2)
    b = np.full((16, 16), 0.3)
    ok = psnr(a, a) == 99.0
    ok = ok and abs(psnr(a, b) - 20.0) < 1e-9
    ok = ok and abs(psnr(np.zeros((8, 8)), np.ones((8, 8)))) < 1e-12
    u, v = rng.uniform(0, 1, (2, 12, 12))
    ok = ok and psnr(u, v) == psnr(v, u)
    out.append(CheckResult("psnr unit cases", ok, "cap, 20 dB, 0 dB, symmetry"))

    img = rng.uniform(0, 1, (32, 32))
    ok = ssim(img, img) == 1.0
    c1 = np.full((16, 16), 0.2)
    c2 = np.full((16, 16), 0.8)
    const = ssim(c1, c2)
    ok = ok and abs(const - 0.4702) < 1e-3
    other = rng.uniform(0, 1, (32, 32))
    ok = ok and abs(ssim(img, other) - ssim(other, img)) < 1e-12
    ok = ok and -1.0 <= ssim(img, other) <= 1.0
    out.append(CheckResult("ssim unit cases", ok, f"self 1.0, constant pair {const:.4f}"))

    with tempfile.TemporaryDirectory() as tmp:
        p = make_clean(7, 1)[0]
        path = Path(tmp) / "t.pgm"
        write_pgm(path, p)
        back = read_pgm(path)
        ok = float(np.max(np.abs(back.pixels - p.pixels))) <= 1.0 / 255.0
        path.write_bytes(path.read_bytes()[:40])
        try:
            read_pgm(path)
            ok = False
        except MalformedFile:
            pass
    out.append(CheckResult("pgm round trip and truncation", ok, "max error <= 1/255"))

    p = make_clean(11, 1)[0]
    scaled = Patch(p.pixels * 0.4)
    spec = DegradeSpec(streak_count=4, streak_amplitude=0.2, seed=5)
    field = streak_field(spec, scaled.pixels.shape)
    degraded = degrade(scaled, spec)
    ok = bool(np.all(field >= 0.0))
    ok = ok and np.allclose(degraded.pixels - scaled.pixels, field, atol=1e-12)
    ident = degrade(scaled, DegradeSpec(streak_count=4, streak_amplitude=0.0, seed=5))
    ok = ok and bool(np.all(ident.pixels == scaled.pixels))
    out.append(CheckResult("degradation additivity", ok, "field >= 0, amplitude 0 identity"))
    return out


SUITES = {
    "linalg": linalg_suite,
    "kernels": kernels_suite,
    "gp": gp_suite,
    "grads": grads_suite,
    "metrics": metrics_suite,
}


def run_suites(names=None):
    """Run the named suites (all by default); returns {suite: [CheckResult]}."""
    if names is None:
        names = list(SUITES)
    unknown = [n for n in names if n not in SUITES]
    if unknown:
        raise KeyError(f"unknown suite(s): {unknown}; available: {list(SUITES)}")
    return {name: SUITES[name]() for name in names}
