import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile("default", max_examples=60, deadline=None,
                          suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


def central_diff(f, x: np.ndarray, h: float = 1e-4) -> np.ndarray:
    """Central finite-difference gradient of scalar ``f`` at ``x`` (float64)."""
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    flat = x.reshape(-1)
    gf = g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gf[i] = (fp - fm) / (2 * h)
    return g


def rel_error(a, b) -> float:
    a, b = np.ravel(a), np.ravel(b)
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def winners_stable(points, offsets, res, h=1e-4) -> bool:
    """True when no cell changes its winning segment under any +-h coordinate nudge
    and no cell center lies within 2h of the stroke.

    Finite differences across either event straddle a kink (of the max, or of
    the distance at zero), so gradient checks are only meaningful away from them.
    """
    from sketchfield.losses import _nearest_segment, _np_dist, _segments, cell_centers
    pts = np.array(points, dtype=np.float64)
    offsets = np.asarray(offsets)
    g = cell_centers(*res)
    ia, ib, ks = _segments(offsets, len(pts))

    def win(p):
        return _nearest_segment(g, p[ia], p[ib], ks, len(offsets), False)

    base = win(pts)
    if _np_dist(g, pts[ia[base]], pts[ib[base]]).min() <= 2 * h:
        return False
    for i in range(pts.size):
        for sign in (1, -1):
            q = pts.copy()
            q.flat[i] += sign * h
            if not np.array_equal(win(q), base):
                return False
    return True


def stable_configs(rng, n, n_points, offsets, res, h=1e-4):
    """Draw ``n`` random point sets whose winning segments are stable (see above)."""
    out = []
    while len(out) < n:
        p = rng.random((n_points, 2))
        if winners_stable(p, offsets, res, h):
            out.append(p)
    return out


# acceptance reporting ----------------------------------------------------------

_CRITERIA: dict = {}


def pytest_configure(config):
    config.addinivalue_line("markers", "criterion(number, title): acceptance criterion check")


@pytest.fixture
def note():
    """Free-form measurements a criterion test wants printed with its verdict."""
    return []


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    mark = item.get_closest_marker("criterion")
    if mark is None or (rep.when != "call" and not rep.failed):
        return
    number, title = mark.args
    notes = item.funcargs.get("note") or []
    verdict = "PASS" if rep.passed else "FAIL"
    if rep.failed and rep.when != "call":
        notes = notes + [f"{rep.when} error"]
    _CRITERIA[number] = f"criterion {number:2d} {verdict}  {title}" + (f" | {'; '.join(notes)}" if notes else "")
    print(f"\n{_CRITERIA[number]}")


def pytest_terminal_summary(terminalreporter):
    if _CRITERIA:
        terminalreporter.section("acceptance criteria")
        for k in sorted(_CRITERIA):
            terminalreporter.write_line(_CRITERIA[k])
