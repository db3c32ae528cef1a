import numpy as np
import pytest

from weakcal.decon import WeakBags
from weakcal.toylab import ToyWorld, toy_f
from weakcal.witness import Records, sigmoid

ACCEPTANCE_LINES: list[str] = []


def skewed_r(x):
    """Toy posterior shifted upward so the class prior is well away from 1/2."""
    x = np.asarray(x, dtype=float)
    return np.clip(toy_f(x) + 0.11 * np.sin(2 * np.pi * x) + 0.15, 0.02, 0.98)


@pytest.fixture(scope="session")
def toy_world():
    return ToyWorld()


@pytest.fixture(scope="session")
def skewed_world():
    return ToyWorld(r=skewed_r)


# Logistic world: z ~ U[-3, 3], P(Y=1 | z) = sigmoid(z + shift), base score sigmoid(2 z).
# With shift = 0 the class prior is exactly 1/2 by symmetry.


def logistic_records(z, label=None, conf=None) -> Records:
    z = np.asarray(z, dtype=float)
    return Records(sigmoid(2.0 * z), np.ones((z.shape[0], 1), dtype=bool), label, conf)


def draw_logistic(n, rng, shift=0.0):
    z = rng.uniform(-3.0, 3.0, n)
    y = (rng.random(n) < sigmoid(z + shift)).astype(np.int8)
    return z, y


def draw_class(n, rng, cls):
    """``n`` draws of z from the class-conditional law of the shift-0 logistic world."""
    out = []
    while sum(len(o) for o in out) < n:
        z, y = draw_logistic(2 * n + 16, rng)
        out.append(z[y == cls])
    return np.concatenate(out)[:n]


def logistic_view(regime, n, rng, gamma1=0.2, gamma2=0.2) -> WeakBags:
    if regime == "pn":
        z, y = draw_logistic(n, rng)
        return WeakBags({"lab": logistic_records(z, label=y)}, 0.5)
    if regime in ("pu", "nnpu"):
        return WeakBags({"pos": logistic_records(draw_class(n, rng, 1)),
                         "unl": logistic_records(draw_logistic(n, rng)[0])}, 0.5)
    if regime == "uu":
        k1, k2 = round((1.0 - gamma1) * n), round(gamma2 * n)
        z1 = np.concatenate([draw_class(k1, rng, 1), draw_class(n - k1, rng, 0)])
        z2 = np.concatenate([draw_class(k2, rng, 1), draw_class(n - k2, rng, 0)])
        return WeakBags({"u1": logistic_records(z1), "u2": logistic_records(z2)}, 0.5,
                        {"gamma1": gamma1, "gamma2": gamma2})
    if regime == "pconf":
        z = draw_class(n, rng, 1)
        return WeakBags({"pconf": logistic_records(z, conf=sigmoid(z))}, 0.5)
    raise ValueError(regime)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.write_sep("=", "acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
