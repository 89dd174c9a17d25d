"""
Gradient surgery between the attack and unlearning objectives.

Gradients are handled as flat vectors over the generator parameters. Only the
unlearning gradient is projected: when <g_b, g_u> < 0,

    g_u_pc = g_u - alpha * <g_b, g_u> / ||g_b||^2 * g_b

which leaves <g_b, g_u_pc> = (1 - alpha) * <g_b, g_u>.
"""

import math
from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np
import torch

from ..config import LossWeights
from ..errors import ContractError, DegenerateProjectionError, NumericalFaultError, UndefinedCosineError


def flat_grad(loss: torch.Tensor, params: Sequence[torch.Tensor], retain_graph: bool = True) -> torch.Tensor:
    """d loss / d params as one flat vector (zeros where a parameter is unused)."""
    grads = torch.autograd.grad(loss, list(params), retain_graph=retain_graph, allow_unused=True)
    flat = torch.cat([(torch.zeros_like(p) if g is None else g).reshape(-1)
                      for p, g in zip(params, grads)])
    if not bool(torch.isfinite(flat).all()):
        raise NumericalFaultError("Non-finite generator gradient")
    return flat


def set_flat_grad(params: Sequence[torch.Tensor], flat: torch.Tensor):
    """Write a flat gradient back into p.grad, parameter by parameter."""
    offset = 0
    for p in params:
        n = p.numel()
        p.grad = flat[offset:offset + n].view_as(p).clone()
        offset += n
    if offset != flat.numel():
        raise ContractError(f"flat gradient has {flat.numel()} entries, parameters need {offset}")


@dataclass(frozen=True, eq=False)
class GradientPair:
    """Attack gradient g_b and unlearning gradient g_u over the same parameters."""
    g_b: torch.Tensor
    g_u: torch.Tensor

    def __post_init__(self):
        if self.g_b.shape != self.g_u.shape or self.g_b.dim() != 1:
            raise ContractError(f"gradient pair shapes differ: {tuple(self.g_b.shape)} vs "
                                f"{tuple(self.g_u.shape)}")
        if not (bool(torch.isfinite(self.g_b).all()) and bool(torch.isfinite(self.g_u).all())):
            raise NumericalFaultError("Non-finite entry in gradient pair")

    @property
    def inner(self) -> float:
        return float(torch.dot(self.g_b, self.g_u).item())

    @property
    def conflicting(self) -> bool:
        return self.inner < 0


def cosine(g1: torch.Tensor, g2: torch.Tensor) -> float:
    """<g1, g2> / (||g1|| ||g2||), clipped to [-1, 1]."""
    if g1.shape != g2.shape:
        raise ContractError(f"cosine of vectors with shapes {tuple(g1.shape)} and {tuple(g2.shape)}")
    n1, n2 = float(g1.norm().item()), float(g2.norm().item())
    if n1 == 0.0 or n2 == 0.0:
        raise UndefinedCosineError("cosine with a zero vector is undefined")
    value = float(torch.dot(g1.flatten(), g2.flatten()).item()) / (n1 * n2)
    return max(-1.0, min(1.0, value))


def safe_cosine(g1: torch.Tensor, g2: torch.Tensor) -> Optional[float]:
    """cosine(), with None standing in for an undefined datapoint."""
    try:
        return cosine(g1, g2)
    except UndefinedCosineError:
        return None


def pcgrad_project(pair: GradientPair, alpha: float) -> torch.Tensor:
    """Project g_u away from g_b by a fraction alpha when the two conflict."""
    if not 0.0 <= alpha <= 1.0:
        raise ContractError(f"alpha must be in [0, 1], got {alpha}")
    dot = torch.dot(pair.g_b, pair.g_u)
    if not bool(dot < 0):
        return pair.g_u
    norm_sq = torch.dot(pair.g_b, pair.g_b)
    if float(norm_sq.item()) == 0.0:
        raise DegenerateProjectionError("conflict flagged against a zero attack gradient")
    return pair.g_u - alpha * (dot / norm_sq) * pair.g_b


def compose_update(g_b: torch.Tensor, g_u_adjusted: torch.Tensor, weights: LossWeights,
                   g_vis: Optional[torch.Tensor] = None,
                   g_non_adv: Optional[torch.Tensor] = None) -> torch.Tensor:
    """g_b + l_unlearn*g_u + l_vis*g_vis + l_non_adv*g_non_adv."""
    for name, g in (('g_u', g_u_adjusted), ('g_vis', g_vis), ('g_non_adv', g_non_adv)):
        if g is not None and g.shape != g_b.shape:
            raise ContractError(f"{name} has shape {tuple(g.shape)}, g_b has {tuple(g_b.shape)}")
    for name, value in (('lambda_unlearn', weights.lambda_unlearn),
                        ('lambda_vis', weights.lambda_vis),
                        ('lambda_non_adv', weights.lambda_non_adv)):
        if value < 0:
            raise ContractError(f"{name} must be >= 0, got {value}")
    total = g_b + weights.lambda_unlearn * g_u_adjusted
    if g_vis is not None:
        total = total + weights.lambda_vis * g_vis
    if g_non_adv is not None:
        total = total + weights.lambda_non_adv * g_non_adv
    return total


@dataclass
class ConflictPoint:
    """Telemetry of one outer step."""
    step: int
    cosine: Optional[float]
    inner_product: float
    projected: bool
    inner_after: float


@dataclass
class ConflictTrace:
    """Cosine similarity between g_b and g_u, per step and per round."""
    mitigation: bool
    points: List[ConflictPoint] = field(default_factory=list)
    round_probe: List[Optional[float]] = field(default_factory=list)
    round_step_mean: List[Optional[float]] = field(default_factory=list)

    def add(self, point: ConflictPoint):
        self.points.append(point)

    def rollback(self, num_points: int, num_rounds: int):
        """Drop everything recorded after the given point and round counts."""
        del self.points[num_points:]
        del self.round_probe[num_rounds:]
        del self.round_step_mean[num_rounds:]

    def close_round(self, probe_cosine: Optional[float], first_step: int):
        """Record the probe cosine and the mean step cosine since first_step."""
        values = [p.cosine for p in self.points[first_step:] if p.cosine is not None]
        self.round_probe.append(probe_cosine)
        self.round_step_mean.append(float(np.mean(values)) if values else None)

    @property
    def missing(self) -> int:
        return sum(1 for p in self.points if p.cosine is None)

    def mean_probe(self) -> Optional[float]:
        values = [c for c in self.round_probe if c is not None and not math.isnan(c)]
        return float(np.mean(values)) if values else None

    def mean_step(self) -> Optional[float]:
        values = [p.cosine for p in self.points if p.cosine is not None]
        return float(np.mean(values)) if values else None
