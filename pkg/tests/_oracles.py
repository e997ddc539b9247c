"""Independent reference implementations used by the tests.

Everything here is written with explicit loops or central differences and
shares no code with the package paths it checks.
"""
import math

import numpy as np
import torch


def bilinear_oracle(img, field):
    """img (H, W, C), field (H, W, 2) normalized -> (H, W, C), clamp-to-edge."""
    img = np.asarray(img, dtype=np.float64)
    field = np.asarray(field, dtype=np.float64)
    h, w, c = img.shape
    out = np.zeros((h, w, c))
    for i in range(h):
        for j in range(w):
            x = ((field[i, j, 0] + 1.0) * w - 1.0) / 2.0
            y = ((field[i, j, 1] + 1.0) * h - 1.0) / 2.0
            x = min(max(x, 0.0), w - 1.0)
            y = min(max(y, 0.0), h - 1.0)
            x0, y0 = int(math.floor(x)), int(math.floor(y))
            x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
            ax, ay = x - x0, y - y0
            for ch in range(c):
                out[i, j, ch] = ((1 - ax) * (1 - ay) * img[y0, x0, ch] + ax * (1 - ay) * img[y0, x1, ch]
                                 + (1 - ax) * ay * img[y1, x0, ch] + ax * ay * img[y1, x1, ch])
    return out


def nearest_oracle(labels, field):
    h, w = labels.shape
    out = np.zeros_like(labels)
    for i in range(h):
        for j in range(w):
            x = ((field[i, j, 0] + 1.0) * w - 1.0) / 2.0
            y = ((field[i, j, 1] + 1.0) * h - 1.0) / 2.0
            u = min(max(int(math.floor(x + 0.5)), 0), w - 1)
            v = min(max(int(math.floor(y + 0.5)), 0), h - 1)
            out[i, j] = labels[v, u]
    return out


def l1_oracle(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    total, n = 0.0, 0
    for x, y in zip(a.ravel(), b.ravel()):
        total += abs(x - y)
        n += 1
    return total / n


def psnr_oracle(a, b):
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    total, n = 0.0, 0
    for x, y in zip(a.ravel(), b.ravel()):
        total += (x - y) ** 2
        n += 1
    mse = total / n
    return math.inf if mse == 0 else 10 * math.log10(1.0 / mse)


def ssim_oracle(a, b, win=11, sigma=1.5):
    """Windowed SSIM evaluated position by position, (H, W, C) inputs."""
    a, b = np.asarray(a, dtype=np.float64), np.asarray(b, dtype=np.float64)
    g1 = [math.exp(-((k - (win - 1) / 2) ** 2) / (2 * sigma ** 2)) for k in range(win)]
    s = sum(g1)
    g1 = [v / s for v in g1]
    c1, c2 = 0.01 ** 2, 0.03 ** 2
    h, w, c = a.shape
    per_channel = []
    for ch in range(c):
        vals = []
        for i in range(h - win + 1):
            for j in range(w - win + 1):
                mx = my = sxx = syy = sxy = 0.0
                for di in range(win):
                    for dj in range(win):
                        wt = g1[di] * g1[dj]
                        x, y = a[i + di, j + dj, ch], b[i + di, j + dj, ch]
                        mx += wt * x
                        my += wt * y
                        sxx += wt * x * x
                        syy += wt * y * y
                        sxy += wt * x * y
                vx, vy, cov = sxx - mx * mx, syy - my * my, sxy - mx * my
                vals.append(((2 * mx * my + c1) * (2 * cov + c2))
                            / ((mx * mx + my * my + c1) * (vx + vy + c2)))
        per_channel.append(sum(vals) / len(vals))
    return sum(per_channel) / c


def sms_oracle(traj):
    traj = np.asarray(traj, dtype=np.float64)
    total, n = 0.0, 0
    for t in range(1, len(traj) - 1):
        for v_prev, v, v_next in zip(traj[t - 1].ravel(), traj[t].ravel(), traj[t + 1].ravel()):
            total += abs((v_prev + v_next) / 2 - v)
            n += 1
    return total / n


def parsing_loss_oracle(src, drv, field):
    warped = nearest_oracle(src, field)
    h, w = src.shape
    matched = sum(int(warped[i, j] == drv[i, j]) for i in range(h) for j in range(w))
    return 1.0 - matched / (h * w)


def directional_check(loss_fn, tensors, seed, n_dirs=2, h=(1e-5, 1e-6, 1e-7, 1e-8)):
    """Largest relative error between analytic and central-difference
    directional derivatives of ``loss_fn()`` along random directions.

    ``tensors`` holds float64 leaves with requires_grad; an entry may also be
    a list of tensors, which are perturbed together along one joint direction.
    With several step sizes the best agreement counts: piecewise-linear
    activations make a stencil that straddles a kink wrong, and zero
    derivatives are dominated by round-off at the smallest step.
    """
    steps = (h,) if isinstance(h, float) else tuple(h)
    groups = [list(t) if isinstance(t, (list, tuple)) else [t] for t in tensors]
    gen = torch.Generator().manual_seed(seed)
    for grp in groups:
        for t in grp:
            t.grad = None
    loss = loss_fn()
    loss.backward()
    worst = 0.0
    for grp in groups:
        grads = [t.grad.detach().clone() if t.grad is not None else torch.zeros_like(t) for t in grp]
        for _ in range(n_dirs):
            vs = [torch.randn(t.shape, generator=gen, dtype=t.dtype) for t in grp]
            analytic = float(sum((g * v).sum() for g, v in zip(grads, vs)))
            best = float("inf")
            for step in steps:
                with torch.no_grad():
                    for t, v in zip(grp, vs):
                        t.add_(step * v)
                    up = float(loss_fn())
                    for t, v in zip(grp, vs):
                        t.sub_(2 * step * v)
                    down = float(loss_fn())
                    for t, v in zip(grp, vs):
                        t.add_(step * v)
                numeric = (up - down) / (2 * step)
                denom = max(abs(analytic), abs(numeric), 1e-6)
                best = min(best, abs(analytic - numeric) / denom)
                if best < 1e-7:
                    break
            worst = max(worst, best)
    return worst


def coordinate_check(loss_fn, tensor, h=1e-6):
    """Entry-by-entry central differences for one small tensor."""
    tensor.grad = None
    loss_fn().backward()
    g = tensor.grad.detach().clone()
    flat = tensor.data.view(-1)
    num = torch.zeros_like(flat)
    for k in range(flat.numel()):
        old = float(flat[k])
        with torch.no_grad():
            flat[k] = old + h
            up = float(loss_fn())
            flat[k] = old - h
            down = float(loss_fn())
            flat[k] = old
        num[k] = (up - down) / (2 * h)
    err = (g.view(-1) - num).abs().max()
    scale = max(float(g.abs().max()), float(num.abs().max()), 1e-6)
    return float(err) / scale
