"""Seeded sampling helpers for empirical Lipschitz and sup estimates."""

import numpy as np

INFLATION = 1.1


def ball_points(rng, n, dim, radius, norm):
    """n points of the closed norm-ball of given radius in R^dim.

    Points are drawn uniformly in the coordinate box and then pulled radially
    inside the ball, with extra mass placed on the boundary sphere.
    """
    if dim == 0:
        return np.zeros((n, 0))
    pts = rng.uniform(-radius, radius, size=(n, dim))
    nrm = norm(pts)
    scale = np.where(nrm > radius, radius / np.maximum(nrm, 1e-300), 1.0)
    pts = pts * scale[:, None]
    k = n // 10
    if k:
        edge = pts[:k]
        en = norm(edge)
        pts[:k] = edge * (radius / np.maximum(en, 1e-300))[:, None]
    return pts


def pair_quotients(fn, norm_in, norm_out, x, y, min_sep=0.0):
    """Difference quotients over pairs separated by more than min_sep."""
    dx = norm_in(x - y)
    ok = dx > min_sep
    df = norm_out(fn(x[ok]) - fn(y[ok]))
    return df / dx[ok]


def sampled_lipschitz(fn, dim, radius, n_pairs, seed, norm_in, norm_out=None, batch=20_000):
    """Max sampled difference quotient of fn over the ball, not inflated.

    Half the pairs are independent points of the ball, half are close pairs
    with separations spread log-uniformly over four decades.
    """
    norm_out = norm_in if norm_out is None else norm_out
    rng = np.random.default_rng(seed)
    best = 0.0
    done = 0
    while done < n_pairs:
        m = min(batch, n_pairs - done)
        x = ball_points(rng, m, dim, radius, norm_in)
        far = ball_points(rng, m // 2, dim, radius, norm_in)
        direction = rng.normal(size=(m - m // 2, dim))
        dn = norm_in(direction)
        direction /= np.maximum(dn, 1e-300)[:, None]
        step = radius * 10.0 ** rng.uniform(-4, 0, size=(m - m // 2, 1))
        near = x[m // 2 :] + step * direction
        outside = norm_in(near) > radius
        near[outside] = x[m // 2 :][outside] - step[outside] * direction[outside]
        nn = norm_in(near)
        near *= np.where(nn > radius, radius / np.maximum(nn, 1e-300), 1.0)[:, None]
        y = np.vstack([far, near])
        q = pair_quotients(fn, norm_in, norm_out, x, y, 1e-9 * radius)
        if q.size:
            best = max(best, float(np.max(q)))
        done += m
    return best


def sampled_sup(fn, dim, radius, n_points, seed, norm_in, norm_out=None, batch=20_000):
    norm_out = norm_in if norm_out is None else norm_out
    rng = np.random.default_rng(seed)
    best = 0.0
    done = 0
    while done < n_points:
        m = min(batch, n_points - done)
        x = ball_points(rng, m, dim, radius, norm_in)
        best = max(best, float(np.max(norm_out(fn(x)))))
        done += m
    return best
