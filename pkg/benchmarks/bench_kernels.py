"""Time the numba kernels against their numpy fallbacks, plus one end-to-end train step.

    python3 benchmarks/bench_kernels.py [--batch 8] [--seq 128] [--d-model 256] [--repeat 20]

The end-to-end step uses whichever backend the package selected at import
time; run it once normally and once with DOCREL_DISABLE_NUMBA=1 to compare.
"""

import argparse
import timeit

import numpy as np

from docrel import _kernels as K


def kernel_cases(rng, b, l, d, h):
    scores = rng.standard_normal((b, h, l, l))
    valid = np.ones((b, l), dtype=bool)
    valid[:, l * 3 // 4:] = False
    probs = K.NUMPY_KERNELS["masked_softmax"](scores, valid)
    x = rng.standard_normal((b, l, d))
    ff = rng.standard_normal((b, l, 4 * d))
    gain, bias = np.ones(d), np.zeros(d)
    _, xhat, rstd = K.NUMPY_KERNELS["layer_norm_forward"](x, gain, bias, 1e-12)
    return {
        "softmax_rows": (scores,),
        "masked_softmax": (scores, valid),
        "softmax_backward": (probs, scores),
        "layer_norm_forward": (x, gain, bias, 1e-12),
        "layer_norm_backward": (x, xhat, rstd, gain),
        "gelu_forward": (ff,),
        "gelu_backward": (ff, ff),
    }


def best_of(fn, args, repeat):
    fn(*args)  # warm-up (and JIT compile)
    return min(timeit.repeat(lambda: fn(*args), number=1, repeat=repeat))


def train_step_time(b, l, d, repeat):
    from docrel.encoding import EncodedInput, collate
    from docrel.model import TRAIN, ModelConfig, forward, init_params
    from docrel.training import backward

    cfg = ModelConfig(vocab_size=1000, n_relations=8, d_model=d, n_layers=2, n_heads=4, max_len=l)
    params = init_params(cfg)
    rng = np.random.default_rng(0)
    items = [
        EncodedInput([2] + [int(t) for t in rng.integers(4, 1000, l - 1)], list(range(l)),
                     [0] * l, [True] * l, int(rng.integers(0, 8)))
        for _ in range(b)
    ]
    batch = collate(items)

    def step():
        _, cache = forward(batch, params, cfg, TRAIN, np.random.default_rng(0))
        backward(cache, batch.relation_ids, params)

    return best_of(step, (), repeat)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--batch", type=int, default=8)
    ap.add_argument("--seq", type=int, default=128)
    ap.add_argument("--d-model", type=int, default=256)
    ap.add_argument("--heads", type=int, default=4)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    rng = np.random.default_rng(0)
    cases = kernel_cases(rng, args.batch, args.seq, args.d_model, args.heads)
    print(f"shape: batch={args.batch} seq={args.seq} d_model={args.d_model} heads={args.heads}")
    print(f"active backend: {K.BACKEND}")
    print(f"{'kernel':22s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for name, call_args in cases.items():
        t_np = best_of(K.NUMPY_KERNELS[name], call_args, args.repeat)
        if K.NUMBA_KERNELS is None:
            print(f"{name:22s} {t_np * 1e3:10.3f} {'n/a':>10s} {'':>8s}")
            continue
        t_nb = best_of(K.NUMBA_KERNELS[name], call_args, args.repeat)
        print(f"{name:22s} {t_np * 1e3:10.3f} {t_nb * 1e3:10.3f} {t_np / t_nb:7.2f}x")

    t_step = train_step_time(args.batch, args.seq, args.d_model, max(3, args.repeat // 4))
    print(f"forward+backward step ({K.BACKEND}): {t_step * 1e3:.1f} ms")


if __name__ == "__main__":
    main()
