import numpy as np
import torch


def finite_difference_check(loss_fn, tensors, step=1e-4, rel_tol=1e-3,
                            max_coords=20, seed=0):
    """Compare analytic gradients of a scalar loss against central differences.

    loss_fn must be a pure function of the given leaf tensors (double
    precision). A sampled subset of coordinates per tensor is perturbed.
    Returns the worst relative error seen.
    """
    rng = np.random.default_rng(seed)
    for t in tensors:
        if t.grad is not None:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for t in tensors:
        assert t.grad is not None, "tensor received no gradient"
        grad = t.grad.detach().reshape(-1)
        flat = t.detach().reshape(-1)
        n = flat.numel()
        for i in rng.choice(n, size=min(max_coords, n), replace=False):
            i = int(i)
            orig = flat[i].item()
            with torch.no_grad():
                flat[i] = orig + step
                lp = loss_fn().item()
                flat[i] = orig - step
                lm = loss_fn().item()
                flat[i] = orig
            fd = (lp - lm) / (2.0 * step)
            an = grad[i].item()
            scale = max(abs(an), abs(fd))
            if scale < 1e-6:
                assert abs(an - fd) < 1e-6, f"tiny-gradient mismatch: {an} vs {fd}"
            else:
                rel = abs(an - fd) / scale
                worst = max(worst, rel)
                assert rel < rel_tol, f"gradient mismatch: analytic {an}, fd {fd}, rel {rel}"
    return worst
