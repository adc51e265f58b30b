"""Straight-line reference implementations used as independent oracles."""

import math


def ref_nt_xent(za, zb, tau):
    z = [list(r) for r in za] + [list(r) for r in zb]
    n2 = len(z)
    n = n2 // 2

    def cos(u, v):
        return sum(a * b for a, b in zip(u, v)) / (math.sqrt(sum(a * a for a in u)) * math.sqrt(sum(b * b for b in v)))

    total = 0.0
    for i in range(n2):
        pos = (i + n) % n2
        den = sum(math.exp(cos(z[i], z[k]) / tau) for k in range(n2) if k != i)
        total += -math.log(math.exp(cos(z[i], z[pos]) / tau) / den)
    return total / n2


def ref_byol(pa, zb, pb, za):
    def term(p, z):
        acc = 0.0
        for u, v in zip(p, z):
            nu = math.sqrt(sum(x * x for x in u))
            nv = math.sqrt(sum(x * x for x in v))
            acc += 2 - 2 * sum(x * y for x, y in zip(u, v)) / (nu * nv)
        return acc / len(p)
    return 0.5 * (term(pa, zb) + term(pb, za))


def ref_vicreg(za, zb, lam=25.0, mu=25.0, nu=1.0, gamma=1.0, eps=1e-4):
    n, d = za.shape
    inv = sum((za[i, j] - zb[i, j]) ** 2 for i in range(n) for j in range(d)) / (n * d)

    def var_cov(z):
        mean = [sum(z[i, j] for i in range(n)) / n for j in range(d)]
        cov = [[sum((z[i, a] - mean[a]) * (z[i, b] - mean[b]) for i in range(n)) / (n - 1) for b in range(d)]
               for a in range(d)]
        v = sum(max(0.0, gamma - math.sqrt(cov[j][j] + eps)) for j in range(d)) / d
        c = sum(cov[a][b] ** 2 for a in range(d) for b in range(d) if a != b) / d
        return v, c

    va, ca = var_cov(za)
    vb, cb = var_cov(zb)
    return lam * inv + mu * (va + vb) / 2 + nu * (ca + cb) / 2
