"""
Certified geometric training: robust losses, kappa/nu schedules and the optimizer loop.
"""

import logging
import time
from typing import Callable, List, Optional, Sequence, Tuple

import numpy as np
import torch
import torch.nn.functional as F

from config.settings import TrainConfig
from core.certifier import cell_margins, logit_margins, worst_case_logits
from core.interp import make_interp_grid, transform_batch
from core.network import GradientTape, Network
from models.dataset import Dataset
from models.interval import Interval, IntervalTensor
from models.training import TrainingResult, TrainLogEntry
from models.transforms import TransformChain
from models.verdict import SplitPlan
from utils.error_handler import TrainingDivergenceError

logger = logging.getLogger(__name__)


def make_rng(seed: int, epoch: int = 0, batch: int = 0) -> np.random.Generator:
    """Counter-based generator for the (seed, epoch, batch) stream."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([seed, epoch, batch])))


def sample_local_ball(chain: TransformChain, nu: Sequence[float],
                      rng: np.random.Generator) -> Tuple[List[float], List[Interval]]:
    """
    Sample theta uniformly from the chain's parameter box and surround it by nu.

    The ball [theta - nu, theta + nu] may extend past the parameter box.

    Returns:
        (theta, ball) with one entry per chain parameter
    """
    params = chain.parameters()
    if len(nu) != len(params):
        raise ValueError(f"nu has {len(nu)} entries, the chain has {len(params)} parameters")
    if any(v < 0 for v in nu):
        raise ValueError(f"nu must be nonnegative, got {list(nu)}")
    theta = [float(rng.uniform(p.lo, p.hi)) if p.width > 0 else p.lo for p in params]
    ball = [Interval(t - v, t + v) for t, v in zip(theta, nu)]
    return theta, ball


def _perturb(x: torch.Tensor, chain: TransformChain) -> IntervalTensor:
    grid = make_interp_grid(x.shape[-2], x.shape[-1], chain) if chain.affine else None
    return transform_batch(x, chain, grid)


def _record(loss: torch.Tensor, tape: Optional[GradientTape]) -> torch.Tensor:
    if tape is not None:
        tape.watch(loss)
    return loss


def loss_ct(net: Network, x: torch.Tensor, y: torch.Tensor, chain: TransformChain,
            theta: Sequence[float], ball: Sequence[Interval], kappa: float,
            tape: Optional[GradientTape] = None) -> torch.Tensor:
    """
    Tractable robust classification loss.

    kappa * CE(f(P(x, theta)), y) + (1 - kappa) * CE(worst-case logits over P(x, ball), y).
    With kappa = 1 the robust term is not evaluated.

    Args:
        net: classifier
        x: batch of clean images, N x C x H x W
        y: labels, N
        chain: chain structure the parameters belong to
        theta: concrete parameters
        ball: local interval parameters around theta
        kappa: weight of the clean term, in [0, 1]
        tape: optional gradient tape; the loss is watched on it

    Returns:
        scalar loss tensor (differentiable w.r.t. the network parameters)
    """
    clean_logits = net.forward_concrete(_perturb(x, chain.at(theta)).lo, tape=tape)
    loss = kappa * F.cross_entropy(clean_logits, y)
    if kappa < 1.0:
        bounds = net.forward_interval(_perturb(x, chain.with_parameters(ball)), tape=tape)
        loss = loss + (1.0 - kappa) * F.cross_entropy(worst_case_logits(bounds, y), y)
    return _record(loss, tape)


def loss_r(net: Network, x: torch.Tensor, y: torch.Tensor, chain: TransformChain,
           theta: Sequence[float], ball: Sequence[Interval], kappa: float,
           tape: Optional[GradientTape] = None) -> torch.Tensor:
    """
    Robust regression loss.

    kappa * MSE(f(P(x, theta)), y) + (1 - kappa) * (MSE(lo, y) + MSE(hi, y)) / 2
    where [lo, hi] are the interval outputs over P(x, ball).
    """
    y = y.reshape(x.shape[0], -1).to(x.dtype)
    prediction = net.forward_concrete(_perturb(x, chain.at(theta)).lo, tape=tape)
    loss = kappa * F.mse_loss(prediction, y)
    if kappa < 1.0:
        bounds = net.forward_interval(_perturb(x, chain.with_parameters(ball)), tape=tape)
        loss = loss + (1.0 - kappa) * (F.mse_loss(bounds.lo, y) + F.mse_loss(bounds.hi, y)) / 2
    return _record(loss, tape)


def loss_ci(net: Network, x: torch.Tensor, y: torch.Tensor, plan: SplitPlan, kappa: float,
            tape: Optional[GradientTape] = None) -> torch.Tensor:
    """
    Ideal robust classification loss over every split cell.

    kappa * CE(f(x), y) + ((1 - kappa) / K) * sum_k CE(worst-case logits over cell k, y).
    Cost grows with K; meant for small plans.
    """
    loss = kappa * F.cross_entropy(net.forward_concrete(x, tape=tape), y)
    if kappa < 1.0:
        robust = 0.0
        for cell in plan.cells:
            bounds = net.forward_interval(_perturb(x, cell), tape=tape)
            robust = robust + F.cross_entropy(worst_case_logits(bounds, y), y)
        loss = loss + (1.0 - kappa) / plan.K * robust
    return _record(loss, tape)


def ramp(epoch: int, cfg: TrainConfig) -> float:
    """Fraction of the final nu in effect: 0 until warm-up ends, then linear over rampup_epochs."""
    if epoch < cfg.warmup_epochs:
        return 0.0
    if cfg.rampup_epochs == 0:
        return 1.0
    return min(1.0, (epoch - cfg.warmup_epochs) / cfg.rampup_epochs)


def schedules(epoch: int, cfg: TrainConfig) -> Tuple[float, List[float]]:
    """
    kappa and nu for an epoch.

    kappa is 1 during warm-up and then decays linearly to kappa_final at the
    last epoch. nu is 0 during warm-up, ramps linearly to nu_final over
    rampup_epochs and stays there.
    """
    if epoch < cfg.warmup_epochs:
        kappa = 1.0
    else:
        span = cfg.epochs - 1 - cfg.warmup_epochs
        progress = 1.0 if span <= 0 else min(1.0, (epoch - cfg.warmup_epochs) / span)
        kappa = 1.0 - (1.0 - cfg.kappa_final) * progress
    factor = ramp(epoch, cfg)
    return kappa, [factor * nu for nu in cfg.nu_final]


def _ibp_augment_loss(net: Network, x: torch.Tensor, y: torch.Tensor, chain: TransformChain,
                      theta: Sequence[float], kappa: float, epsilon: float,
                      tape: Optional[GradientTape]) -> torch.Tensor:
    """IBP over an l-infinity ball around the augmented image, clipped to [0, 1]."""
    augmented = _perturb(x, chain.at(theta)).lo
    loss = kappa * F.cross_entropy(net.forward_concrete(augmented, tape=tape), y)
    if kappa < 1.0:
        box = IntervalTensor((augmented - epsilon).clamp(0.0, 1.0), (augmented + epsilon).clamp(0.0, 1.0))
        bounds = net.forward_interval(box, tape=tape)
        loss = loss + (1.0 - kappa) * F.cross_entropy(worst_case_logits(bounds, y), y)
    return _record(loss, tape)


def _evaluate(net: Network, dataset: Dataset, chain: TransformChain, nu: Sequence[float],
              seed: int, epoch: int, batch_size: int) -> Tuple[float, float]:
    """Clean accuracy and accuracy under one sampled local ball per batch."""
    if len(dataset) == 0:
        return 0.0, 0.0
    clean = robust = 0
    with torch.no_grad():
        for b, start in enumerate(range(0, len(dataset), batch_size)):
            x = dataset.images[start:start + batch_size]
            y = dataset.labels[start:start + batch_size].to(torch.int64)
            clean += int((logit_margins(net.forward_concrete(x), y) > 0).sum())
            _, ball = sample_local_ball(chain, nu, make_rng(seed, epoch, 1_000_000 + b))
            robust += int((cell_margins(net, x, y, chain.with_parameters(ball)) > 0).sum())
    return clean / len(dataset), robust / len(dataset)


def fit(net: Network, dataset: Dataset, cfg: TrainConfig, validation: Optional[Dataset] = None,
        epoch_callback: Optional[Callable[[TrainLogEntry], None]] = None) -> TrainingResult:
    """
    Train a network in place.

    One theta is sampled per mini-batch from the (seed, epoch, batch) stream;
    the run is deterministic given cfg.seed.

    Args:
        net: network to train (its first Normalize layer receives the train statistics)
        dataset: training data
        cfg: validated training configuration; cfg.augmentation holds the transform chain
        validation: optional held-out data evaluated after every epoch
        epoch_callback: called with each epoch's log entry

    Returns:
        TrainingResult with the trained network and the epoch log

    Raises:
        TrainingDivergenceError: if a batch loss is not finite
    """
    result = TrainingResult(network=net, config=cfg.model_dump(exclude={'augmentation'}))
    if cfg.epochs == 0 or len(dataset) == 0:
        logger.info("Nothing to train (0 epochs or empty dataset)")
        return result

    chain = cfg.augmentation or TransformChain.identity()
    nu_final = list(cfg.nu_final) or [0.0] * len(chain.parameters())
    if len(nu_final) != len(chain.parameters()):
        raise ValueError(f"nu_final needs {len(chain.parameters())} entries, got {len(nu_final)}")

    mean, std = dataset.normalization()
    if not net.set_input_statistics(mean, std):
        logger.warning("Network has no normalize layer; training on raw pixels")

    optimizer = torch.optim.Adam(net.parameters(), lr=cfg.lr)
    scheduler = torch.optim.lr_scheduler.MultiStepLR(optimizer, milestones=list(cfg.lr_milestones),
                                                     gamma=cfg.lr_gamma)
    labels = dataset.labels if cfg.task == 'regression' else dataset.labels.to(torch.int64)
    n = len(dataset)

    logger.info(f"Training {cfg.method} for {cfg.epochs} epochs on {n} images, "
                f"transforms {chain.describe()}, seed {cfg.seed}")

    for epoch in range(cfg.epochs):
        started = time.time()
        kappa, nu = schedules(epoch, cfg)
        if cfg.method == 'augment':
            kappa = 1.0
        if not cfg.nu_final:
            nu = [0.0] * len(nu_final)
        order = make_rng(cfg.seed, epoch, 0).permutation(n)
        lr = optimizer.param_groups[0]['lr']
        total_loss = 0.0
        batches = 0

        net.train()
        for b, start in enumerate(range(0, n, cfg.batch_size)):
            index = torch.as_tensor(order[start:start + cfg.batch_size], dtype=torch.int64)
            x, y = dataset.images[index], labels[index]
            theta, ball = sample_local_ball(chain, nu, make_rng(cfg.seed, epoch, b + 1))

            tape = GradientTape.for_network(net)
            if cfg.method == 'ibp_augment':
                loss = _ibp_augment_loss(net, x, y, chain, theta, kappa,
                                         cfg.ibp_epsilon * ramp(epoch, cfg), tape)
            elif cfg.task == 'regression':
                loss = loss_r(net, x, y, chain, theta, ball, kappa, tape=tape)
            else:
                loss = loss_ct(net, x, y, chain, theta, ball, kappa, tape=tape)

            if not torch.isfinite(loss):
                raise TrainingDivergenceError(
                    f"Loss became {loss.item()} at epoch {epoch}, batch {b} "
                    f"(kappa={kappa:.3f}, nu={nu}, theta={theta})"
                )

            grads = net.backward(tape)
            for name, param in net.named_parameters():
                param.grad = grads[name]
            if cfg.grad_clip_l2:
                torch.nn.utils.clip_grad_norm_(net.parameters(), cfg.grad_clip_l2)
            optimizer.step()
            optimizer.zero_grad(set_to_none=True)

            total_loss += loss.item()
            batches += 1
            logger.debug(f"epoch {epoch} batch {b}: loss {loss.item():.4f}")

        scheduler.step()
        net.eval()

        entry = TrainLogEntry(epoch=epoch, kappa=kappa, nu=list(nu), lr=lr,
                              loss=total_loss / max(1, batches), batches=batches,
                              seconds=time.time() - started)
        if validation is not None and cfg.task == 'classification':
            entry.validation_accuracy, entry.validation_robust_accuracy = _evaluate(
                net, validation, chain, nu, cfg.seed, epoch, cfg.batch_size)
        result.log.append(entry)

        message = f"Epoch {epoch}: loss {entry.loss:.4f}, kappa {kappa:.3f}, lr {lr:.2e}"
        if entry.validation_accuracy is not None:
            message += (f", val acc {entry.validation_accuracy:.1%}, "
                        f"val local-robust acc {entry.validation_robust_accuracy:.1%}")
        logger.info(message)
        if epoch_callback:
            epoch_callback(entry)

    return result
