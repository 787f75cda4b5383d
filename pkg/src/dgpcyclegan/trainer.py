"""Training loop for the two mapping networks with GP pseudo-label supervision.

One epoch follows the bank-then-update ordering: the weather bank snapshots
(s, z) taps of the weather-to-clean net over the weather set, the clean bank
those of the clean-to-weather net over the clean set, both at epoch-start
weights.  The update loop then walks shuffled unpaired image pairs and for
each pair runs

    fake_c = G(iw),  rec_w = F(fake_c)      (forward chain; F taps give the
                                             supervised latents for the clean
                                             bank's GP)
    fake_w = F(ic),  rec_c = G(fake_w)      (mirrored chain; G taps supervised
                                             against the weather bank)

and assembles

    total = cyc_w + cyc_c + adv_fwd + adv_rev + identity
            + lambda_p * (p_fwd + p_rev)

with L1 cycle and identity terms, least-squares adversarial terms and the
GP pseudo losses.  Generators are updated on that objective, each domain
discriminator on its own least-squares objective against the pre-update
fakes.  With lambda_p = 0 the pseudo path contributes no gradient, and with
the supervisor disabled it is skipped entirely; both produce bit-identical
parameter trajectories.
"""

from __future__ import annotations

from dataclasses import dataclass, field, fields
from pathlib import Path
from typing import NamedTuple

import numpy as np

from .data_metrics import Patch, psnr, ssim, write_pgm
from .errors import EmptyDataset
from .gp_supervisor import (
    FeatureBank,
    bank_build,
    gp_condition,
    knn_select,
    pseudo_loss,
    pseudo_loss_grad,
    pseudo_loss_query_grad,
)
from .kernels import KernelSpec
from .nets import AdamState, Discriminator, Generator, adam_step, save_checkpoint


@dataclass
class TrainConfig:
    """Desk-scale training configuration.

    The GP kernel defaults to a depth-gp_depth squared-exponential stack
    with beta/gamma ratio 1.0; kernel_family swaps the first layer's family,
    and a full KernelSpec overrides all of it.
    """

    lambda_p: float = 0.03
    n_neighbors: int = 32
    gp_depth: int = 4
    lr: float = 2e-4
    lr_halve_every: int = 30
    epochs: int = 30
    batch_size: int = 2
    seed: int = 0
    dgp_enabled: bool = True
    grad_through_query: bool = False
    kernel: KernelSpec | None = None
    kernel_family: str = "se"
    kernel_beta: float = 2.5
    kernel_gamma: float = 2.5
    noise_var: float = 0.01
    img_side: int = 32
    gen_hidden: tuple = (128, 32, 32, 128)
    tap_s: int = 2
    tap_z: int = 3
    disc_hidden: tuple = (64, 32)
    eval_interval: int = 1

    def __post_init__(self) -> None:
        if self.lambda_p < 0:
            raise ValueError("lambda_p must be non-negative")
        if min(self.n_neighbors, self.gp_depth, self.epochs, self.batch_size) < 1:
            raise ValueError("counts must be positive")
        if self.lr_halve_every < 1:
            raise ValueError("lr_halve_every must be positive")

    def resolve_kernel(self) -> KernelSpec:
        if self.kernel is not None:
            return self.kernel
        return KernelSpec.heterogeneous(
            first_family=self.kernel_family,
            depth=self.gp_depth,
            beta=self.kernel_beta,
            gamma=self.kernel_gamma,
            noise_var=self.noise_var,
        )


@dataclass
class LossBreakdown:
    """Named components of one training objective evaluation."""

    cyc_w: float
    cyc_c: float
    adv_fwd: float
    adv_rev: float
    identity: float
    p_fwd: float
    p_rev: float
    lambda_p: float
    total: float

    @staticmethod
    def assemble(cyc_w, cyc_c, adv_fwd, adv_rev, identity, p_fwd, p_rev, lambda_p):
        total = cyc_w + cyc_c + adv_fwd + adv_rev + identity + lambda_p * (p_fwd + p_rev)
        return LossBreakdown(
            cyc_w, cyc_c, adv_fwd, adv_rev, identity, p_fwd, p_rev, lambda_p, total
        )


class EpochBanks(NamedTuple):
    weather: FeatureBank
    clean: FeatureBank


@dataclass
class TrainState:
    gen_wc: Generator
    gen_cw: Generator
    disc_c: Discriminator
    disc_w: Discriminator
    opt: dict
    kernel: KernelSpec
    step: int = 0
    sigma2_log: list = field(default_factory=list)


@dataclass
class EpochStats:
    epoch: int
    lr: float
    cyc_w: float
    cyc_c: float
    adv_fwd: float
    adv_rev: float
    identity: float
    p_fwd: float
    p_rev: float
    total: float
    mean_sigma2: float
    psnr: float
    ssim: float


CSV_COLUMNS = tuple(f.name for f in fields(EpochStats))


def lr_at(epoch: int, config: TrainConfig) -> float:
    """Step-decayed learning rate: halved every lr_halve_every epochs."""
    return config.lr * 0.5 ** (epoch // config.lr_halve_every)


def lsgan_terms(score_real: float, score_fake: float):
    """Least-squares GAN terms from raw scores: (generator, discriminator)."""
    gen = (score_fake - 1.0) ** 2
    disc = 0.5 * ((score_real - 1.0) ** 2 + score_fake ** 2)
    return gen, disc


def adversarial_losses(d: Discriminator, real, fake):
    """(gen_term, disc_term) of the least-squares objective for one pair."""
    score_real, _ = d.forward(_pix(real))
    score_fake, _ = d.forward(_pix(fake))
    return lsgan_terms(score_real, score_fake)


def _pix(img) -> np.ndarray:
    return img.pixels if isinstance(img, Patch) else np.asarray(img, dtype=float)


def _l1(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean(np.abs(a - b)))


def identity_loss(fcw: Generator, fwc: Generator, iw, ic) -> float:
    """L1(fcw(iw), iw) + L1(fwc(ic), ic)."""
    iw, ic = _pix(iw), _pix(ic)
    out_w, _, _, _ = fcw.forward(iw)
    out_c, _, _, _ = fwc.forward(ic)
    return _l1(out_w, iw) + _l1(out_c, ic)


def build_epoch_banks(weather_images, clean_images, gen_wc: Generator, gen_cw: Generator, epoch: int) -> EpochBanks:
    """Snapshot (s, z) taps of both domains at the current weights.

    The weather bank stores taps of the weather-to-clean net over the weather
    set; the clean bank stores taps of the clean-to-weather net over the
    clean set, matching the supervised taps of the update loop.
    """
    if not weather_images or not clean_images:
        raise EmptyDataset("both domains need at least one image")
    bank_w = bank_build(weather_images, gen_wc, domain="weather", epoch=epoch)
    bank_c = bank_build(clean_images, gen_cw, domain="clean", epoch=epoch)
    return EpochBanks(weather=bank_w, clean=bank_c)


def generator_step_terms(
    gen_wc: Generator,
    gen_cw: Generator,
    disc_c: Discriminator,
    disc_w: Discriminator,
    iw,
    ic,
    *,
    lambda_p: float,
    kernel: KernelSpec | None = None,
    banks: EpochBanks | None = None,
    n_neighbors: int = 32,
    fixed_posteriors=None,
    grad_through_query: bool = False,
    want_grads: bool = True,
):
    """Loss components and generator gradients for one unpaired sample.

    Pseudo terms are computed when either live banks or pre-computed
    posterior targets are supplied; pseudo-label, variance and neighbor
    choice are constants of the step, so their only gradient contribution is
    through the supervised z-tap (plus, optionally, the query's kernel row).
    Returns (components dict, grads_wc, grads_cw, posteriors, fakes).
    """
    iw, ic = _pix(iw), _pix(ic)
    npix = iw.size

    # Forward chain and its reconstruction.
    fake_c, _, _, cache_g1 = gen_wc.forward(iw)
    rec_w, s_c_t, z_c_t, cache_f1 = gen_cw.forward(fake_c)
    # Mirrored chain.
    fake_w, _, _, cache_f2 = gen_cw.forward(ic)
    rec_c, s_w_t, z_w_t, cache_g2 = gen_wc.forward(fake_w)
    # Identity mappings.
    id_w, _, _, cache_f3 = gen_cw.forward(iw)
    id_c, _, _, cache_g3 = gen_wc.forward(ic)

    cyc_w = _l1(iw, rec_w)
    cyc_c = _l1(ic, rec_c)
    identity = _l1(id_w, iw) + _l1(id_c, ic)

    score_fake_c, cache_dc = disc_c.forward(fake_c)
    score_fake_w, cache_dw = disc_w.forward(fake_w)
    adv_fwd = (score_fake_c - 1.0) ** 2
    adv_rev = (score_fake_w - 1.0) ** 2

    post_f = post_r = None
    p_fwd = p_rev = 0.0
    if fixed_posteriors is not None:
        post_f, post_r = fixed_posteriors
    elif banks is not None:
        ids_f = knn_select(banks.clean, z_c_t, n_neighbors)
        post_f = gp_condition(kernel, banks.clean, ids_f, s_c_t)
        ids_r = knn_select(banks.weather, z_w_t, n_neighbors)
        post_r = gp_condition(kernel, banks.weather, ids_r, s_w_t)
    if post_f is not None:
        p_fwd = pseudo_loss(post_f, z_c_t)
        p_rev = pseudo_loss(post_r, z_w_t)

    comps = {
        "cyc_w": cyc_w,
        "cyc_c": cyc_c,
        "adv_fwd": adv_fwd,
        "adv_rev": adv_rev,
        "identity": identity,
        "p_fwd": p_fwd,
        "p_rev": p_rev,
    }
    if not want_grads:
        return comps, None, None, (post_f, post_r), (fake_c, fake_w)

    inject = lambda_p != 0.0 and post_f is not None
    grad_z_f = lambda_p * pseudo_loss_grad(post_f, z_c_t) if inject else None
    grad_z_r = lambda_p * pseudo_loss_grad(post_r, z_w_t) if inject else None
    grad_s_f = grad_s_r = None
    if inject and grad_through_query and banks is not None:
        grad_s_f = lambda_p * pseudo_loss_query_grad(kernel, banks.clean, post_f, s_c_t, z_c_t)
        grad_s_r = lambda_p * pseudo_loss_query_grad(kernel, banks.weather, post_r, s_w_t, z_w_t)

    # Forward chain backward: cycle L1 at rec_w plus pseudo grads at the taps,
    # then the adversarial push on fake_c through the (frozen) discriminator.
    g_rec_w = np.sign(rec_w - iw) / npix
    g_cw_1, g_fake_c = gen_cw.backward(cache_f1, g_rec_w, grad_s=grad_s_f, grad_z=grad_z_f)
    _, g_fake_c_adv = disc_c.backward(cache_dc, 2.0 * (score_fake_c - 1.0))
    g_wc_1, _ = gen_wc.backward(cache_g1, g_fake_c + g_fake_c_adv)

    g_rec_c = np.sign(rec_c - ic) / npix
    g_wc_2, g_fake_w = gen_wc.backward(cache_g2, g_rec_c, grad_s=grad_s_r, grad_z=grad_z_r)
    _, g_fake_w_adv = disc_w.backward(cache_dw, 2.0 * (score_fake_w - 1.0))
    g_cw_2, _ = gen_cw.backward(cache_f2, g_fake_w + g_fake_w_adv)

    g_cw_3, _ = gen_cw.backward(cache_f3, np.sign(id_w - iw) / npix)
    g_wc_3, _ = gen_wc.backward(cache_g3, np.sign(id_c - ic) / npix)

    grads_wc = g_wc_1 + g_wc_2 + g_wc_3
    grads_cw = g_cw_1 + g_cw_2 + g_cw_3
    return comps, grads_wc, grads_cw, (post_f, post_r), (fake_c, fake_w)


def discriminator_step_terms(disc: Discriminator, real, fake, want_grads: bool = True):
    """Least-squares discriminator objective and its parameter gradients.

    The fake is a detached image: no gradient flows back to the generator.
    """
    score_real, cache_real = disc.forward(_pix(real))
    score_fake, cache_fake = disc.forward(_pix(fake))
    loss = 0.5 * ((score_real - 1.0) ** 2 + score_fake ** 2)
    if not want_grads:
        return loss, None
    g_real, _ = disc.backward(cache_real, score_real - 1.0)
    g_fake, _ = disc.backward(cache_fake, score_fake)
    return loss, g_real + g_fake


def init_state(config: TrainConfig) -> TrainState:
    """Seed-deterministic networks and optimizer states."""
    ss = np.random.SeedSequence(config.seed)
    s_wc, s_cw, s_dc, s_dw = ss.spawn(4)
    in_dim = config.img_side * config.img_side
    gen_wc = Generator(in_dim, config.gen_hidden, config.tap_s, config.tap_z,
                       rng=np.random.default_rng(s_wc))
    gen_cw = Generator(in_dim, config.gen_hidden, config.tap_s, config.tap_z,
                       rng=np.random.default_rng(s_cw))
    disc_c = Discriminator(in_dim, config.disc_hidden, rng=np.random.default_rng(s_dc))
    disc_w = Discriminator(in_dim, config.disc_hidden, rng=np.random.default_rng(s_dw))
    opt = {
        "gen_wc": AdamState.for_params(gen_wc.params, config.lr),
        "gen_cw": AdamState.for_params(gen_cw.params, config.lr),
        "disc_c": AdamState.for_params(disc_c.params, config.lr),
        "disc_w": AdamState.for_params(disc_w.params, config.lr),
    }
    return TrainState(gen_wc, gen_cw, disc_c, disc_w, opt, config.resolve_kernel())


def train_step(iw_batch, ic_batch, banks: EpochBanks | None, state: TrainState, config: TrainConfig) -> LossBreakdown:
    """One optimizer step over a batch of independent unpaired samples.

    Sample gradients are averaged; generators update first, then each
    discriminator on its own objective against the pre-update fakes.
    """
    if not isinstance(iw_batch, (list, tuple)):
        iw_batch = [iw_batch]
        ic_batch = [ic_batch]
    n = len(iw_batch)
    use_banks = banks if config.dgp_enabled else None

    sums = dict.fromkeys(("cyc_w", "cyc_c", "adv_fwd", "adv_rev", "identity", "p_fwd", "p_rev"), 0.0)
    g_wc = np.zeros_like(state.gen_wc.params)
    g_cw = np.zeros_like(state.gen_cw.params)
    fakes = []
    for iw, ic in zip(iw_batch, ic_batch):
        comps, gw, gc, posts, fake_pair = generator_step_terms(
            state.gen_wc, state.gen_cw, state.disc_c, state.disc_w, iw, ic,
            lambda_p=config.lambda_p,
            kernel=state.kernel,
            banks=use_banks,
            n_neighbors=config.n_neighbors,
            grad_through_query=config.grad_through_query,
        )
        for key in sums:
            sums[key] += comps[key]
        g_wc += gw
        g_cw += gc
        fakes.append(fake_pair)
        if use_banks is not None:
            state.sigma2_log.append(posts[0].variance)
            state.sigma2_log.append(posts[1].variance)

    state.gen_wc.params = adam_step(state.opt["gen_wc"], state.gen_wc.params, g_wc / n)
    state.gen_cw.params = adam_step(state.opt["gen_cw"], state.gen_cw.params, g_cw / n)

    g_dc = np.zeros_like(state.disc_c.params)
    g_dw = np.zeros_like(state.disc_w.params)
    for (iw, ic), (fake_c, fake_w) in zip(zip(iw_batch, ic_batch), fakes):
        _, gd = discriminator_step_terms(state.disc_c, ic, fake_c)
        g_dc += gd
        _, gd = discriminator_step_terms(state.disc_w, iw, fake_w)
        g_dw += gd
    state.disc_c.params = adam_step(state.opt["disc_c"], state.disc_c.params, g_dc / n)
    state.disc_w.params = adam_step(state.opt["disc_w"], state.disc_w.params, g_dw / n)

    state.step += 1
    return LossBreakdown.assemble(
        sums["cyc_w"] / n, sums["cyc_c"] / n, sums["adv_fwd"] / n, sums["adv_rev"] / n,
        sums["identity"] / n, sums["p_fwd"] / n, sums["p_rev"] / n, config.lambda_p,
    )


@dataclass
class DeskData:
    """Unpaired training sets plus the held-out paired evaluation split."""

    clean_train: list
    weather_train: list
    eval_pairs: list  # (weather, clean) tuples


def evaluate(gen_wc: Generator, eval_pairs) -> tuple[float, float]:
    """Mean restoration PSNR/SSIM of the weather-to-clean net on held-out pairs."""
    psnrs = []
    ssims = []
    for weather, clean in eval_pairs:
        restored = gen_wc.restore(_pix(weather))
        psnrs.append(psnr(restored, _pix(clean)))
        ssims.append(ssim(restored, _pix(clean)))
    return float(np.mean(psnrs)), float(np.mean(ssims))


def train_run(
    config: TrainConfig,
    data: DeskData,
    out_dir=None,
    checkpoint_interval: int = 10,
    sample_count: int = 0,
):
    """Full training run; returns (state, per-epoch history).

    When out_dir is given, writes metrics.csv, periodic checkpoints and
    input/restored/target sample triptychs.
    """
    if not data.clean_train or not data.weather_train:
        raise EmptyDataset("training sets must be non-empty")
    state = init_state(config)
    rng_shuffle = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(5)[4])
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    history = []
    for epoch in range(config.epochs):
        lr = lr_at(epoch, config)
        for opt_state in state.opt.values():
            opt_state.lr = lr

        banks = None
        if config.dgp_enabled:
            banks = build_epoch_banks(
                data.weather_train, data.clean_train, state.gen_wc, state.gen_cw, epoch
            )

        order_w = rng_shuffle.permutation(len(data.weather_train))
        order_c = rng_shuffle.permutation(len(data.clean_train))
        n_pairs = min(len(order_w), len(order_c))

        state.sigma2_log.clear()
        comp_sums = np.zeros(8)  # cyc_w, cyc_c, adv_fwd, adv_rev, identity, p_fwd, p_rev, total
        n_batches = 0
        for start in range(0, n_pairs, config.batch_size):
            iw_batch = [data.weather_train[i] for i in order_w[start : start + config.batch_size]]
            ic_batch = [data.clean_train[i] for i in order_c[start : start + config.batch_size]]
            bd = train_step(iw_batch, ic_batch, banks, state, config)
            comp_sums += (bd.cyc_w, bd.cyc_c, bd.adv_fwd, bd.adv_rev,
                          bd.identity, bd.p_fwd, bd.p_rev, bd.total)
            n_batches += 1

        mean_sigma2 = float(np.mean(state.sigma2_log)) if state.sigma2_log else float("nan")
        do_eval = epoch % config.eval_interval == 0 or epoch == config.epochs - 1
        ep_psnr, ep_ssim = evaluate(state.gen_wc, data.eval_pairs) if (do_eval and data.eval_pairs) else (float("nan"),) * 2
        means = comp_sums / max(n_batches, 1)
        history.append(EpochStats(epoch, lr, *means, mean_sigma2, ep_psnr, ep_ssim))

        if out is not None:
            if do_eval and sample_count > 0:
                for i, (weather, clean) in enumerate(data.eval_pairs[:sample_count]):
                    restored = state.gen_wc.restore(_pix(weather))
                    strip = np.concatenate([_pix(weather), restored, _pix(clean)], axis=1)
                    write_pgm(out / f"sample_{epoch}_{i}.pgm", Patch(strip, "clean"))
            if (epoch + 1) % checkpoint_interval == 0 or epoch == config.epochs - 1:
                save_checkpoint(
                    out / f"ckpt_{epoch}.bin",
                    {"gen_wc": state.gen_wc, "gen_cw": state.gen_cw,
                     "disc_c": state.disc_c, "disc_w": state.disc_w},
                    step=state.step,
                )

    if out is not None:
        write_metrics_csv(out / "metrics.csv", history)
    return state, history


def write_metrics_csv(path, history) -> None:
    """Per-epoch CSV in the documented column order."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(",".join(CSV_COLUMNS) + "\n")
        for row in history:
            fh.write(",".join(_fmt(getattr(row, col)) for col in CSV_COLUMNS) + "\n")


def _fmt(v) -> str:
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)
