"""Smoke test for the simcf Python module.

Build first:
    cargo build --release -p simcf-py --features extension-module
    cp target/release/libsimcf.so python/simcf.so
"""

import json
import math
import os
import sys

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import simcf  # noqa: E402


def small_config():
    cfg = simcf.ScenarioConfig()
    cfg.num_aps = 3
    cfg.num_users = 2
    cfg.nx = 3
    cfg.ny = 3
    cfg.seed = 5
    return cfg


def check_config():
    cfg = small_config()
    assert cfg.atoms_per_layer == 9
    back = simcf.ScenarioConfig.from_json(cfg.to_json())
    assert back == cfg
    assert json.loads(cfg.to_json())["counts"]["L"] == 3
    try:
        simcf.ScenarioConfig.from_json('{"counts": {"L": "x"}}')
    except ValueError as e:
        assert "counts.L" in str(e), e
    else:
        raise AssertionError("bad config accepted")
    # -174 dBm/Hz over 10 MHz
    assert abs(10 * math.log10(simcf.noise_power(-174.0, 10e6) / 1e-3) + 104.0) < 1e-9
    assert simcf.path_loss(10.0, cfg) < simcf.path_loss(5.0, cfg)


def check_gradient():
    cfg = small_config()
    trial = simcf.Trial(cfg, 0)
    phases = trial.initial_phases
    grad = trial.gradient("aga", phases)
    assert len(grad) == len(phases) == cfg.num_aps * cfg.num_layers * cfg.atoms_per_layer
    h = 1e-6
    for i in (0, len(phases) // 2, len(phases) - 1):
        up, down = list(phases), list(phases)
        up[i] += h
        down[i] -= h
        fd = (trial.sum_rate("aga", up) - trial.sum_rate("aga", down)) / (2 * h)
        assert abs(fd - grad[i]) <= 1e-4 * max(1.0, abs(fd)), (i, fd, grad[i])
    assoc = trial.association("nua")
    assert len(assoc) == cfg.num_aps and all(sum(row) == 1 for block in assoc for row in block)


def check_runs():
    cfg = small_config()
    ao = simcf.run_scheme(cfg, 0, "aga-ao")
    base = simcf.run_scheme(cfg, 0, "aga-rp-ep")
    assert ao.sum_rate >= base.sum_rate
    assert all(b >= a - 1e-9 for a, b in zip(ao.ao_trace, ao.ao_trace[1:]))
    assert abs(ao.ao_trace[0] - base.sum_rate) < 1e-9
    assert all(sum(p) <= cfg.p_max_w * (1 + 1e-9) for p in ao.power)

    table = simcf.monte_carlo(cfg, ["aga-sim", "nua-rp-ep"], 3)
    assert len(table.runs) == 6
    trials, mean, std = table.summary("aga-sim")
    assert trials == 3 and mean > 0 and std >= 0
    again = simcf.monte_carlo(cfg, ["aga-sim", "nua-rp-ep"], 3)
    assert [r.sum_rate for r in table.runs] == [r.sum_rate for r in again.runs]
    return ao, table


def main():
    check_config()
    check_gradient()
    ao, table = check_runs()
    print(f"tokens: {', '.join(simcf.scheme_tokens())}")
    print(f"{ao!r}, outer iterations {ao.outer_iters}")
    for token in ("aga-sim", "nua-rp-ep"):
        print(f"{token}: mean {table.summary(token)[1]:.4f} bit/s/Hz")
    print("smoke test passed")


if __name__ == "__main__":
    main()
