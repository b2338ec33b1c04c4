"""Shared fixtures: packaged fixture files and small scenario builders."""

from importlib import resources

import pytest

from fairalloc import build_scenario, load_events, load_scenario


def data_path(name):
    """Filesystem path of a packaged data file."""
    return resources.files("fairalloc.data") / name


@pytest.fixture(scope="session")
def fig1_path():
    return data_path("fig1_scenario.json")


@pytest.fixture(scope="session")
def fig2_path():
    return data_path("fig2_scenario.json")


@pytest.fixture(scope="session")
def fig2_events_path():
    return data_path("fig2_events.json")


@pytest.fixture(scope="session")
def fig1(fig1_path):
    return load_scenario(fig1_path)


@pytest.fixture(scope="session")
def fig2(fig2_path):
    return load_scenario(fig2_path)


@pytest.fixture(scope="session")
def fig2_events(fig2_events_path):
    return load_events(fig2_events_path)


def single_edge(
    d=("linear", 2.0),
    s=("linear", 3.0),
    c=("linear", 1.0),
    *,
    weight=0.0,
    p_lo=0.0,
    p_hi=4.0,
    q_lo=0.0,
    q_hi=4.0,
    horizon=1,
):
    """One target, one source, one edge."""
    return build_scenario(
        targets=["t1"],
        sources=["s1"],
        edges=[
            {
                "target": "t1",
                "source": "s1",
                "d": {"kind": d[0], "coef": d[1]},
                "s": {"kind": s[0], "coef": s[1]},
                "c": {"kind": c[0], "coef": c[1]},
            }
        ],
        bounds={
            "targets": {"t1": {"p_lo": p_lo, "p_hi": p_hi}},
            "sources": {"s1": {"q_lo": q_lo, "q_hi": q_hi}},
        },
        fairness={"t1": {"weight": weight}},
        horizon=horizon,
    )


def small_scenario(edges, *, p_hi, q_hi, weights=None, p_lo=None, q_lo=None, horizon=1):
    """Build a scenario from compact edge tuples.

    ``edges`` items are ``(target, source, d, s, c)`` with each function a
    ``(kind, coef)`` pair; ``p_hi``/``q_hi`` map node ids to caps.
    """
    edge_dicts = [
        {
            "target": t,
            "source": s,
            "d": {"kind": d[0], "coef": d[1]},
            "s": {"kind": u[0], "coef": u[1]},
            "c": {"kind": c[0], "coef": c[1]},
        }
        for t, s, d, u, c in edges
    ]
    p_lo = p_lo or {}
    q_lo = q_lo or {}
    return build_scenario(
        targets=list(p_hi),
        sources=list(q_hi),
        edges=edge_dicts,
        bounds={
            "targets": {
                t: {"p_lo": p_lo.get(t, 0.0), "p_hi": hi} for t, hi in p_hi.items()
            },
            "sources": {
                s: {"q_lo": q_lo.get(s, 0.0), "q_hi": hi} for s, hi in q_hi.items()
            },
        },
        fairness={t: {"weight": w} for t, w in (weights or {}).items()},
        horizon=horizon,
    )
