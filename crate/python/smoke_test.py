#!/usr/bin/env python3
"""Smoke test for the _tcrbm extension module.

Builds nothing itself: it loads the cdylib produced by
`cargo build -p tcrbm-py --release` straight from the target directory and
exercises the main types and operations end to end.
"""

import math
import sys
from importlib.machinery import ExtensionFileLoader
from importlib.util import module_from_spec, spec_from_loader
from pathlib import Path


def load_module():
    root = Path(__file__).resolve().parent.parent
    candidates = [
        root / "target" / "release" / "lib_tcrbm.so",
        root / "target" / "release" / "_tcrbm.dll",
        root / "target" / "release" / "lib_tcrbm.dylib",
        root / "target" / "debug" / "lib_tcrbm.so",
    ]
    path = next((p for p in candidates if p.exists()), None)
    if path is None:
        sys.exit("extension not found; run `cargo build -p tcrbm-py --release` first")
    loader = ExtensionFileLoader("_tcrbm", str(path))
    spec = spec_from_loader("_tcrbm", loader)
    mod = module_from_spec(spec)
    loader.exec_module(mod)
    return mod


def main():
    t = load_module()

    # matrices and rng round-trip
    m = t.Mat([[1.0, 2.0], [3.0, 4.0]])
    assert m.rows == 2 and m.cols == 2
    assert m.tolist() == [[1.0, 2.0], [3.0, 4.0]]
    assert m.transpose().tolist() == [[1.0, 3.0], [2.0, 4.0]]
    rng = t.Rng(7)
    assert t.Rng(7).next_f64() == t.Rng(7).next_f64()

    # chain product and scale
    side, order = 6, 3
    rs = t.Rng(1)
    maps = [t.Mat.random_uniform(side, side, rs) for _ in range(order)]
    prod = t.chain_product(maps)
    assert prod.rows == side
    s = t.chain_scale(side, order)
    assert 0.0 < s < 1.0

    # model params, conditionals, recovery exactness on the exact product
    params = t.ModelParams.init_random(order, 2, 3, side, 0.5, rng.split(0))
    o, probs = t.chain_and_probs(maps, params)
    assert len(probs) == params.num_kernels
    assert all(0.0 <= v <= 1.0 for row in probs[0].tolist() for v in row)
    recovered = t.recover_maps(o, maps, params)
    worst = max(r.max_abs_diff(m) for r, m in zip(recovered, maps))
    assert worst <= 1e-6, f"recovery drift {worst}"

    # one CD step moves the parameters and reports a finite J
    grads = t.cd_m_step(maps, params, 1, rng.split(1))
    updated = t.apply_update(params, grads, 0.1)
    assert updated.kernels[0].max_abs_diff(params.kernels[0]) > 0.0
    j = t.recon_error_j(maps, grads.recon_maps)
    assert math.isfinite(j) and j >= 0.0

    # policy arithmetic
    cfg = t.RunConfig(k=2, n_w=3, epochs=4, seed=7)
    q = t.QTable(2, 10)
    probs = dict(t.action_probs(q, 5, cfg))
    assert abs(sum(probs.values()) - 1.0) < 1e-12
    q2 = t.q_backup(q, 5, 1, -2.0, 6, cfg)
    assert q2.get(5, 1) != q.get(5, 1)
    best, partition = t.partition_oracle(
        {(0, 2): 1.0, (0, 3): 5.0, (2, 2): 1.0, (1, 2): 9.0, (2, 3): 9.0, (1, 3): 9.0}, 4, 3
    )
    assert best == 2.0 and partition == [(0, 2), (2, 2)]

    # sequence synthesis + a tiny fixed and adaptive training run
    img = t.Mat([[math.exp(-((r - 3) ** 2 + (c - 3) ** 2) / 4.0) for c in range(8)] for r in range(8)])
    spec = t.SequenceSpec(length=6, max_rotation_deg=15.0, max_shift_px=1, constrained=True, seed=3)
    seq = t.build_sequence(img, spec, t.Rng(3))
    assert len(seq) == 6
    fixed = t.train_fixed([seq], 2, cfg)
    assert len(fixed) == 4 * 3  # epochs x units
    assert all(math.isfinite(r.j) for r in fixed)
    adaptive, q_final = t.train_adaptive([seq], cfg)
    assert adaptive, "adaptive run produced no records"
    assert q_final.clamp_state(99) == 10 and q_final.clamp_state(0) == 2
    assert all(2 <= r.order <= 10 for r in adaptive)

    # determinism across runs
    again = t.train_fixed([seq], 2, cfg)
    assert [r.j for r in fixed] == [r.j for r in again]

    print("smoke test passed:", len(fixed) + len(adaptive), "training records checked")


if __name__ == "__main__":
    main()
