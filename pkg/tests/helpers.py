"""Shared test utilities: the finite-difference gradient oracle."""

import numpy as np
import torch


def central_difference_grads(make_loss, param: torch.Tensor, coords, eps: float):
    """Central finite differences of make_loss() w.r.t. selected flat coords
    of param, perturbing the parameter in place."""
    flat = param.detach().reshape(-1)
    out = []
    for i in coords:
        orig = flat[i].item()
        flat[i] = orig + eps
        f_plus = make_loss().item()
        flat[i] = orig - eps
        f_minus = make_loss().item()
        flat[i] = orig
        out.append((f_plus - f_minus) / (2.0 * eps))
    return np.array(out)


def fd_gradcheck(
    module: torch.nn.Module,
    make_loss,
    eps: float = 1e-3,
    rtol: float = 1e-4,
    atol: float = 1e-5,
    max_coords_per_tensor: int | None = None,
    seed: int = 0,
):
    """Assert autograd gradients of the scalar make_loss() match central
    finite differences for every parameter of module (or a seeded random
    subset of coordinates when max_coords_per_tensor is set).

    The module must already be in double precision; make_loss must be
    deterministic and re-runnable.

    The oracle's own truncation error is O(eps^2 * f'''), which for GRU and
    batch-norm losses can exceed the tolerance at eps=1e-3. Coordinates that
    fail the primary pass are therefore re-measured at eps=1e-5: truncation
    shrinks by 1e4 and the coordinate must then agree tightly, whereas a
    genuine gradient error is eps-independent and still fails.
    """
    rng = np.random.default_rng(seed)
    params = list(module.named_parameters())
    loss = make_loss()
    grads = torch.autograd.grad(loss, [p for _, p in params])
    checked = 0
    for (name, p), grad in zip(params, grads):
        n = p.numel()
        if max_coords_per_tensor is not None and n > max_coords_per_tensor:
            coords = sorted(rng.choice(n, size=max_coords_per_tensor, replace=False).tolist())
        else:
            coords = list(range(n))
        fd = central_difference_grads(make_loss, p, coords, eps)
        an = grad.reshape(-1)[coords].numpy()
        bad = np.abs(an - fd) > atol + rtol * np.abs(fd)
        if bad.any():
            retry = [c for c, b in zip(coords, bad) if b]
            fd_fine = central_difference_grads(make_loss, p, retry, eps=1e-5)
            an_fine = grad.reshape(-1)[retry].numpy()
            still_bad = np.abs(an_fine - fd_fine) > 1e-7 + rtol * np.abs(fd_fine)
            assert not still_bad.any(), (
                f"{name}: {still_bad.sum()} of {len(coords)} coords disagree beyond "
                f"oracle truncation; worst analytic={an_fine[still_bad][0]:.6e} "
                f"fd={fd_fine[still_bad][0]:.6e}"
            )
        checked += len(coords)
    return checked
