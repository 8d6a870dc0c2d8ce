"""Synthetic maps used by tests, examples and scenario configs.

All evaluators act on arrays of shape (..., d).
"""

import numpy as np

from .graph_transform import MapModel


def saddle_map(gamma=0.05, a=2.0, b=0.5, eta=0.0, bump=0.25):
    """T(x, y) = (a x + gamma sin y, b y + gamma sin x) + eta bump (cos y, cos x).

    Lip of the sine coupling is gamma in the max norm; the cosine bump adds
    a sup and Lipschitz deviation of eta * bump.
    """

    def T(z):
        x, y = z[..., 0], z[..., 1]
        u = a * x + gamma * np.sin(y) + eta * bump * np.cos(y)
        v = b * y + gamma * np.sin(x) + eta * bump * np.cos(x)
        return np.stack([u, v], axis=-1)

    lip = gamma + abs(eta) * bump
    return MapModel(T, 2, fixed_point_hint=np.zeros(2), lip_data=lip,
                    name=f"saddle(gamma={gamma},eta={eta})")


def saddle_nonlinearity_lip(gamma=0.05, eta=0.0, bump=0.25):
    return gamma + abs(eta) * bump


def linear_map(matrix, offset=None):
    M = np.asarray(matrix, dtype=float)
    c = np.zeros(M.shape[0]) if offset is None else np.asarray(offset, dtype=float)

    def T(z):
        return z @ M.T + c

    return MapModel(T, M.shape[0], lip_data=0.0, name="linear")


def coupled_linear_saddle(k=0.1, a=2.0, b=0.5):
    """S(x, y) = (a x, b y + k x); unstable line y = k x / (a - b)."""
    return linear_map([[a, 0.0], [k, b]])


def cubic_map(h=0.4, eta=0.0):
    """T(x) = x + h (x - x^3) + eta sin(x): equilibria near -1, 0, 1."""

    def T(z):
        x = z[..., 0]
        return (x + h * (x - x ** 3) + eta * np.sin(x))[..., None]

    return MapModel(T, 1, domain_lo=[-1.5], domain_hi=[1.5], name=f"cubic(h={h},eta={eta})")


def planar_gradient_map(h=0.4, c=0.5, eta=0.0):
    """Cubic map in x times contraction in y; saddle at 0, sinks at (+-1, 0)."""

    def T(z):
        x, y = z[..., 0], z[..., 1]
        u = x + h * (x - x ** 3) + eta * np.sin(y)
        v = c * y + eta * np.sin(x)
        return np.stack([u, v], axis=-1)

    return MapModel(T, 2, domain_lo=[-1.5, -1.5], domain_hi=[1.5, 1.5], name="planar_gradient")


def may_leonard_field(alpha=0.8, beta=1.3):
    def f(z):
        x = z
        xm = np.roll(x, 1, axis=-1)
        xp = np.roll(x, -1, axis=-1)
        return x * (1.0 - x - alpha * xm - beta * xp)

    return f


def cyclic_map(alpha=0.8, beta=1.3, t=1.0, steps=20):
    """Time-t RK4 map of a May-Leonard competition system.

    The three axis equilibria form a heteroclinic cycle e1 -> e2 -> e3 -> e1,
    so the connection graph on them is not acyclic.
    """
    f = may_leonard_field(alpha, beta)
    dt = t / steps

    def T(z):
        x = np.asarray(z, dtype=float)
        for _ in range(steps):
            k1 = f(x)
            k2 = f(x + 0.5 * dt * k1)
            k3 = f(x + 0.5 * dt * k2)
            k4 = f(x + dt * k3)
            x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
        return x

    return MapModel(T, 3, domain_lo=[-0.5] * 3, domain_hi=[1.5] * 3, name="may_leonard")


def cyclic_equilibria():
    return [np.eye(3)[i] for i in range(3)]
