"""Benchmark the jitted kernels against the pure-numpy fallback.

Times the convolution/pooling kernels on training-shaped inputs and one
full train step (forward + backward + Adam) of the dilated temporal net.

    python benchmarks/bench_kernels.py [--repeats N] [--quick]

The active backend for library-level runs follows FSKWS_BACKEND; this
script always imports both kernel modules directly so the comparison does
not depend on the environment flag.
"""

import argparse
import time

import numpy as np

from fskws import _kernels_numpy
from fskws import dataset, nets, trainer
from fskws import tensor as T
from fskws.backend import active_backend

try:
    from fskws import _kernels_numba

    HAVE_NUMBA = True
except ImportError:
    HAVE_NUMBA = False


def timeit(fn, repeats):
    fn()  # warm-up (and JIT compile for the numba path)
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_kernels(repeats):
    r = np.random.default_rng(0)
    # shapes as seen by a 2-way 5-shot training episode of td-resnet7
    x1 = r.normal(size=(20, 40, 55)).astype(np.float32)
    w1 = r.normal(size=(48, 40, 7)).astype(np.float32)
    g1 = r.normal(size=(20, 48, 49)).astype(np.float32)
    x2 = r.normal(size=(20, 64, 30, 33)).astype(np.float32)
    w2 = r.normal(size=(64, 64, 10, 4)).astype(np.float32)
    g2 = r.normal(size=(20, 64, 21, 30)).astype(np.float32)

    pool_idx = _kernels_numpy.maxpool2d_forward(x2, 2, 2, 2, 2)[1]
    gp = r.normal(size=pool_idx.shape).astype(np.float32)
    cases = [
        ("conv1d fwd", lambda m: m.conv1d_forward(x1, w1, 1, 1)),
        ("conv2d fwd", lambda m: m.conv2d_forward(x2, w2, 1, 1)),
        ("maxpool fwd", lambda m: m.maxpool2d_forward(x2, 2, 2, 2, 2)),
        ("maxpool bwd", lambda m: m.maxpool2d_backward(gp, pool_idx, 30, 33)),
    ]
    print("jitted vs fallback (backward convs are shared BLAS: see below)")
    print(f"{'kernel':<16} {'numpy':>10} {'numba':>10} {'speedup':>8}")
    for name, fn in cases:
        t_np = timeit(lambda: fn(_kernels_numpy), repeats)
        if HAVE_NUMBA:
            t_nb = timeit(lambda: fn(_kernels_numba), repeats)
            print(f"{name:<16} {t_np * 1e3:>8.2f}ms {t_nb * 1e3:>8.2f}ms "
                  f"{t_np / t_nb:>7.1f}x")
        else:
            print(f"{name:<16} {t_np * 1e3:>8.2f}ms {'n/a':>10} {'':>8}")

    shared = [
        ("conv1d bwd in", lambda: _kernels_numpy.conv1d_backward_input(g1, w1, 1, 1, 55)),
        ("conv1d bwd w", lambda: _kernels_numpy.conv1d_backward_weight(g1, x1, 1, 1, 7)),
        ("conv2d bwd in", lambda: _kernels_numpy.conv2d_backward_input(g2, w2, 1, 1, 30, 33)),
        ("conv2d bwd w", lambda: _kernels_numpy.conv2d_backward_weight(g2, x2, 1, 1, 10, 4)),
    ]
    print(f"\n{'shared BLAS kernel':<20} {'time':>10}")
    for name, fn in shared:
        print(f"{name:<20} {timeit(fn, repeats) * 1e3:>8.2f}ms")


def bench_train_step(repeats):
    import tempfile
    from pathlib import Path
    import sys

    sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "tests"))
    from helpers import make_tone_manifest

    root = Path(tempfile.mkdtemp(prefix="fskws_bench_"))
    manifest = make_tone_manifest(root)
    cfg = trainer.TrainConfig(arch=nets.TD_RESNET7, case="a", n_way=2, k_shot=5,
                              seed=0, epochs=1, train_episodes_per_epoch=1,
                              val_episodes_per_epoch=1)
    spec = cfg.episode_spec(dataset.PHASE_TRAIN, cfg.train_queries_per_class)
    net = nets.build_network(cfg.arch, seed=0)
    params = net.parameters()
    rng = np.random.default_rng(0)
    episode = dataset.sample_episode(manifest, spec, rng)
    dataset.load_episode(episode, spec, rng, manifest)

    def step():
        _, loss, _ = trainer._episode_forward(net, episode, train=True)
        T.backward(loss)
        T.adam_step(params, 1e-3)

    t = timeit(step, repeats)
    print(f"\ntrain step (2-way 5-shot td-resnet7, backend={active_backend()}): "
          f"{t * 1e3:.1f} ms/episode")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=20)
    parser.add_argument("--quick", action="store_true", help="3 repeats only")
    args = parser.parse_args()
    repeats = 3 if args.quick else args.repeats
    if not HAVE_NUMBA:
        print("numba not importable: timing the numpy fallback only")
    bench_kernels(repeats)
    bench_train_step(repeats)


if __name__ == "__main__":
    main()
