"""Loss terms shared by the distillation, sparsity and output-shaping methods."""

import math

import torch
import torch.nn.functional as F  # noqa: N812


def kl_divergence(p: torch.Tensor, q: torch.Tensor) -> torch.Tensor:
    """Σ_i p_i log(p_i / q_i) per row of two probability matrices. Terms with p_i = 0 contribute 0."""
    p, q = p.to(torch.float64), q.to(torch.float64)
    terms = torch.where(p > 0, p * (torch.log(p) - torch.log(q)), torch.zeros_like(p))
    return terms.sum(dim=-1)


def distillation_kl(student_logits: torch.Tensor, teacher_logits: torch.Tensor, temperature: float = 1.0) -> torch.Tensor:
    """Batch mean of KL(teacher ‖ student) over temperature-softened outputs."""
    student_log = F.log_softmax(student_logits / temperature, dim=1)
    teacher = F.softmax(teacher_logits.detach() / temperature, dim=1)
    return F.kl_div(student_log, teacher, reduction="batchmean")


def uniform_kl(logits: torch.Tensor) -> torch.Tensor:
    """Batch mean of KL(uniform ‖ softmax(logits)). Zero exactly when the outputs are uniform."""
    num_classes = logits.shape[1]
    log_p = F.log_softmax(logits, dim=1)
    return (-math.log(num_classes) - log_p.mean(dim=1)).mean()


def l1_penalty(params: torch.Tensor, gamma: float) -> torch.Tensor:
    """γ‖θ‖₁. Its subgradient is γ·sign(θ)."""
    return gamma * params.abs().sum()
