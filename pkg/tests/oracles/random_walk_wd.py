"""Coarse discrete-time oracle for scenario B down-period transforms.

Independent of the package: every quantity is advanced on a fixed time grid
with Bernoulli arrivals, Bernoulli regime switches and a Lindley recursion.
Run once; the printed numbers are frozen into tests/test_estimators.py.

    python tests/oracles/random_walk_wd.py
"""
import numpy as np

H = 1e-3
STEPS = 2_000_000  # per chunk
ALPHAS = np.array([0.25, 0.5, 1.0, 2.0])


def replica(seed, horizon):
    rng = np.random.default_rng(seed)
    n_total = int(horizon / H)
    w, down = 0.0, True
    sum_j = 0.0
    sum_je = np.zeros_like(ALPHAS)
    sum_e = np.zeros_like(ALPHAS)
    burn = int(0.1 * n_total)
    done = 0
    while done < n_total:
        n = min(STEPS, n_total - done)
        arrivals = rng.random(n) < 0.5 * H
        sizes = np.where(arrivals, rng.exponential(1.0, n), 0.0)
        # regime switches: down mean 1, up mean 3
        u = rng.random(n)
        ws = np.empty(n)
        js = np.empty(n, dtype=bool)
        for k in range(n):
            js[k] = down
            ws[k] = w
            if down:
                w += sizes[k]
                if u[k] < H / 1.0:
                    down = False
            else:
                w = max(w + sizes[k] - H, 0.0)
                if u[k] < H / 3.0:
                    down = True
        keep = np.arange(done, done + n) >= burn
        e = np.exp(-np.outer(ALPHAS, ws[keep]))
        sum_e += e.sum(axis=1)
        sum_je += e[:, js[keep]].sum(axis=1)
        sum_j += js[keep].sum()
        done += n
    m = n_total - burn
    return sum_je / sum_j, sum_j / m, sum_e / m


if __name__ == "__main__":
    wd, pd, w = [], [], []
    for s in range(16):
        a, b, c = replica(1000 + s, 5e4)
        wd.append(a)
        pd.append(b)
        w.append(c)
        print(s, a, b, c, flush=True)
    wd, pd, w = map(np.array, (wd, pd, w))
    n = len(pd)
    print("alphas", ALPHAS)
    print("lst_wd", wd.mean(0), wd.std(0, ddof=1) / np.sqrt(n))
    print("p_d", pd.mean(), pd.std(ddof=1) / np.sqrt(n))
    print("lst_w", w.mean(0), w.std(0, ddof=1) / np.sqrt(n))
