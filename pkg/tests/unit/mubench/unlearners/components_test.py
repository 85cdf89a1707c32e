"""Formula checks for the building blocks of the approximate methods."""
import math
from pathlib import Path

import numpy as np
import pytest
import torch
from mubench.config import ArchKind
from mubench.domain import TrainingDivergedError
from mubench.substrate.networks import forward, init_model, layer_groups, layer_mask
from mubench.unlearners import get_method, unlearn
from mubench.unlearners.base import sub_retain_indices
from mubench.unlearners.boundary import adversarial_labels, shadow_dataset
from mubench.unlearners.distillation import bad_teacher_loss, divergence_limit, scrub_max_step
from mubench.unlearners.fisher import fisher_noise, ssd_dampen, ssd_selection
from mubench.unlearners.influence import first_order_update, second_order_update
from mubench.unlearners.losses import distillation_kl, kl_divergence, l1_penalty, uniform_kl
from mubench.unlearners.noise import error_maximizing_noise, error_minimizing_noise
from mubench.unlearners.pgu import energy_basis, project_out
from mubench.unlearners.reinit import accumulated_gradient, noisy_layers, select_filters, transpose_kernels, unit_scores
from mubench.unlearners.sparsity import magnitude_prune, random_other_labels, salun_mask

from tests.utilities import class_wise_context, same_params, toy_arch, toy_data, trained_model


def test_first_order_update() -> None:
    """Test θ + τ·g."""
    model = init_model(toy_arch(), 0)
    g = torch.ones_like(model.params)
    assert torch.allclose(first_order_update(model, g, 0.5).params, model.params + 0.5)


def test_second_order_update_with_identity_hessian() -> None:
    """Test that H = I reduces the Newton step to θ + g."""
    model = init_model(toy_arch(), 0)
    g = torch.linspace(-1, 1, model.arch.param_count())
    updated, outcome = second_order_update(model, g, lambda v: v, damping=0.0)
    assert outcome.converged
    assert torch.allclose(updated.params, model.params + g, atol=1e-6)


def test_fisher_noise_scales_with_alpha() -> None:
    """Test that the perturbation grows with √α and shrinks with the Fisher information."""
    model = init_model(toy_arch(), 0)
    fim = torch.full_like(model.params, 3.0)
    one = fisher_noise(model, fim, 1.0, 1.0, seed=4).params - model.params
    four = fisher_noise(model, fim, 4.0, 1.0, seed=4).params - model.params
    assert torch.allclose(four, 2 * one, atol=1e-6)
    flat = fisher_noise(model, torch.zeros_like(fim), 1.0, 1.0, seed=4).params - model.params
    assert torch.allclose(flat, 2 * one, atol=1e-6)


def test_ssd_dampens_selected_parameters() -> None:
    """Test selection and β = min(λ·FIM_D / FIM_f, 1)."""
    params = torch.tensor([2.0, 2.0, 2.0])
    fim_all = torch.tensor([1.0, 1.0, 1.0])
    fim_forget = torch.tensor([20.0, 5.0, 0.5])
    assert ssd_selection(fim_all, fim_forget, 10.0).tolist() == [True, False, False]
    assert torch.allclose(ssd_dampen(params, fim_all, fim_forget, 10.0, 1.0), torch.tensor([0.1, 2.0, 2.0]))
    assert torch.allclose(ssd_dampen(params, fim_all, fim_forget, 1.0, 1.0), torch.tensor([0.1, 0.4, 2.0]))


def test_salun_mask_size() -> None:
    """Test ⌈fraction·|θ|⌉ selected weights."""
    train, _ = toy_data()
    model = trained_model(train)
    mask = salun_mask(model, train, np.arange(4), 0.3)
    assert int(mask.sum()) == math.ceil(0.3 * model.params.numel())
    assert int(salun_mask(model, train, np.arange(4), 1.0).sum()) == model.params.numel()
    with pytest.raises(ValueError, match="fraction"):
        salun_mask(model, train, np.arange(4), 0.0)


def test_random_other_labels() -> None:
    """Test that random labels never repeat the true label."""
    labels = torch.arange(300) % 5
    out = random_other_labels(labels, 5, seed=2)
    assert not torch.any(out == labels)
    assert int(out.min()) >= 0
    assert int(out.max()) < 5


def test_magnitude_prune() -> None:
    """Test that the ⌊s·|θ|⌋ smallest entries are zeroed."""
    params = torch.tensor([0.5, -0.1, 3.0, 0.2, -2.0])
    pruned, keep = magnitude_prune(params, 0.4)
    assert pruned.tolist() == pytest.approx([0.5, 0.0, 3.0, 0.0, -2.0])
    assert keep.tolist() == [1.0, 0.0, 1.0, 0.0, 1.0]
    with pytest.raises(ValueError, match="sparsity"):
        magnitude_prune(params, 1.0)


def test_losses() -> None:
    """Test the loss terms against closed forms."""
    p = torch.tensor([[0.5, 0.5, 0.0]])
    q = torch.tensor([[0.25, 0.25, 0.5]])
    assert float(kl_divergence(p, q)[0]) == pytest.approx(math.log(2))
    assert float(kl_divergence(q, q)[0]) == pytest.approx(0.0)
    assert float(uniform_kl(torch.zeros(4, 3))) == pytest.approx(0.0, abs=1e-6)
    assert float(uniform_kl(torch.tensor([[5.0, 0.0, 0.0]]))) > 0
    logits = torch.randn(4, 3, generator=torch.Generator().manual_seed(0))
    assert float(distillation_kl(logits, logits, temperature=4.0)) == pytest.approx(0.0, abs=1e-6)
    assert float(l1_penalty(torch.tensor([1.0, -2.0]), 0.5)) == pytest.approx(1.5)


def test_energy_basis_and_projection() -> None:
    """Test that projected gradients are orthogonal to the retained input span."""
    generator = torch.Generator().manual_seed(0)
    span = torch.randn(2, 6, generator=generator, dtype=torch.float64)
    rows = torch.randn(20, 2, generator=generator, dtype=torch.float64) @ span
    basis = energy_basis(rows, 0.999)
    assert basis.shape == (6, 2)
    assert torch.allclose(basis.T @ basis, torch.eye(2, dtype=torch.float64), atol=1e-8)
    gradient = torch.randn(3, 6, generator=generator, dtype=torch.float64)
    projected = project_out(gradient, basis)
    assert torch.allclose(projected @ rows.T, torch.zeros(3, 20, dtype=torch.float64), atol=1e-8)
    assert energy_basis(rows, 0.0).shape == (6, 0)
    assert torch.equal(project_out(gradient, energy_basis(rows, 0.0)), gradient)


def test_pgu_keeps_retained_logits_of_linear_model(tmp_path: Path) -> None:
    """Test that weight updates of a linear head are orthogonal to every sub-retain input."""
    ctx = class_wise_context(tmp_path, sub_retain_fraction=0.5)
    result = unlearn(get_method("pgu").spec(epochs=2, lr=0.1, energy=1.0), ctx)
    head = layer_groups(ctx.original.arch)[-1]
    delta = (result.model.params - ctx.original.params)[head.start : head.start + head.weight_size].view(3, 64)
    retain_inputs = ctx.dataset.inputs[torch.as_tensor(sub_retain_indices(ctx))].flatten(1)
    assert float((delta @ retain_inputs.T).abs().max()) < 1e-4


def test_adversarial_labels_without_step() -> None:
    """Test ε = 0: every label is kept and counted as a failure."""
    model = init_model(toy_arch(), 0)
    train, _ = toy_data()
    labels, failures = adversarial_labels(model.arch, model.params, train.inputs[:5], train.labels[:5], 0.0)
    assert torch.equal(labels, train.labels[:5])
    assert failures == 5


def test_adversarial_labels_follow_the_model() -> None:
    """Test that a moved label is the model's prediction on the perturbed input."""
    train, _ = toy_data()
    model = trained_model(train)
    labels, failures = adversarial_labels(model.arch, model.params, train.inputs, train.labels, 1.0)
    moved = labels != train.labels
    assert int(moved.sum()) + failures == len(train)


def test_shadow_dataset(tmp_path: Path) -> None:
    """Test that D_f is relabelled to the extra class."""
    ctx = class_wise_context(tmp_path)
    shadow = shadow_dataset(ctx)
    forget = len(ctx.plan.forget_indices)
    assert shadow.num_classes == 4
    assert torch.all(shadow.labels[:forget] == 3)
    assert torch.all(shadow.labels[forget:] < 3)


def test_noise_objectives_move_the_class_loss() -> None:
    """Test error-maximising and error-minimising noise."""
    train, _ = toy_data()
    model = trained_model(train)
    _, up = error_maximizing_noise(model, 0, 6, steps=10, lr=0.01, regularization=0.0, seed=1)
    _, down = error_minimizing_noise(model, 0, 6, steps=10, lr=0.01, regularization=0.0, seed=1)
    assert up[-1] > up[0]
    assert down[-1] < down[0]
    assert len(up) == 11


def test_select_filters() -> None:
    """Test lowest-first selection with index-order ties."""
    assert select_filters([3.0, 1.0, 1.0, 0.5], 0.75) == [3, 1, 2]
    assert select_filters([3.0, 1.0], 0.0) == []
    with pytest.raises(ValueError, match="fraction"):
        select_filters([1.0], 2.0)


def test_transpose_kernels() -> None:
    """Test that transposing twice is the identity and dense layers are untouched."""
    model = init_model(toy_arch(ArchKind.CNN), 0)
    once = transpose_kernels(model)
    assert torch.equal(transpose_kernels(once).params, model.params)
    dense = layer_mask(model.arch, {"hidden", "head"}).bool()
    assert torch.equal(once.params[dense], model.params[dense])
    assert not torch.equal(once.params, model.params)
    logistic = init_model(toy_arch(), 0)
    assert torch.equal(transpose_kernels(logistic).params, logistic.params)


def test_noisy_layers() -> None:
    """Test that noise lands on the named layers only."""
    model = init_model(toy_arch(ArchKind.MLP), 0)
    params = noisy_layers(model, ["hidden"], 0.1, seed=0)
    hidden = layer_mask(model.arch, {"hidden"}).bool()
    assert torch.equal(params[~hidden], model.params[~hidden])
    assert not torch.equal(params[hidden], model.params[hidden])
    assert torch.equal(noisy_layers(model, ["hidden"], 0.0, seed=0), model.params)
    assert forward(model.arch, params, torch.zeros(1, 1, 8, 8)).shape == (1, 3)


def test_msg_scores_convolution_filters_only(tmp_path: Path) -> None:
    """Test that MSG leaves dense layers alone."""
    ctx = class_wise_context(tmp_path, kind=ArchKind.CNN)
    conv = [g.name for g in layer_groups(ctx.original.arch) if g.is_conv]
    assert list(unit_scores(ctx.original, accumulated_gradient(ctx))) == conv
    result = unlearn(get_method("msg").spec(fraction=0.5, epochs=0), ctx)
    assert list(result.diagnostics["reinitialised_units"]) == conv
    dense = layer_mask(ctx.original.arch, {"hidden", "head"}).bool()
    assert torch.equal(result.model.params[dense], ctx.original.params[dense])
    assert not same_params(result.model, ctx.original)


def test_bad_teacher_loss_on_two_classes() -> None:
    """Test the distillation term against Σ p·log(p/q), per row against the teacher it follows."""
    arch = toy_arch(num_classes=2)
    competent, incompetent, student = (init_model(arch, seed).params for seed in (0, 1, 2))
    x = torch.randn(4, *arch.input_shape, generator=torch.Generator().manual_seed(0))
    forget_rows = torch.tensor([False, True, False, True])
    loss = bad_teacher_loss(arch, competent, incompetent, forget_rows, temperature=1.0)
    value = float(loss(student, x, torch.zeros(4, dtype=torch.int64), torch.arange(4)))

    q = torch.softmax(forward(arch, student, x), dim=1).double()
    good = torch.softmax(forward(arch, competent, x), dim=1).double()
    bad = torch.softmax(forward(arch, incompetent, x), dim=1).double()
    expected = 0.0
    for row in range(4):
        p = bad[row] if forget_rows[row] else good[row]
        expected += sum(float(p[c] * math.log(p[c] / q[row, c])) for c in range(2)) / 4
    assert value == pytest.approx(expected, rel=1e-4, abs=1e-7)


def test_scrub_max_step_ascends_the_kl() -> None:
    """Test that the max step moves along the KL gradient and raises the KL."""
    train, _ = toy_data()
    teacher = trained_model(train).params
    arch = toy_arch()
    student = teacher + 0.01 * torch.randn(teacher.shape, generator=torch.Generator().manual_seed(0))
    inputs = train.inputs[:8]

    p = student.clone().requires_grad_(True)
    kl = distillation_kl(forward(arch, p, inputs), forward(arch, teacher, inputs))
    (gradient,) = torch.autograd.grad(kl, p)
    stepped = scrub_max_step(arch, student, teacher, inputs, lr=0.01)
    assert float(torch.dot(stepped - student, gradient)) > 0
    after = distillation_kl(forward(arch, stepped, inputs), forward(arch, teacher, inputs))
    assert float(after) > float(kl)


def test_scrub_divergence_limit() -> None:
    """Test the abort threshold: ten times the starting retain loss, no floor."""
    assert divergence_limit(0.001) == pytest.approx(0.01)
    assert divergence_limit(0.3) == pytest.approx(3.0)
    assert divergence_limit(0.0) == math.inf


def test_scrub_aborts_when_retain_loss_climbs(tmp_path: Path) -> None:
    """Test that a retain loss driven above ten times its start stops SCRUB."""
    ctx = class_wise_context(tmp_path)
    spec = get_method("scrub").spec(epochs=1, max_epochs=0, lr=100.0, kl_weight=0.0, ce_weight=-1.0)
    with pytest.raises(TrainingDivergedError):
        unlearn(spec, ctx)
