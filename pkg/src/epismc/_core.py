"""Compiled kernels shared by the likelihood, MCMC and SMC modules.

State is held in three int64 arrays indexed by individual:
``inf`` (infection day or NEVER), ``notif`` (observed or imputed
notification day, NEVER when unknown) and ``rem`` (removal day or NEVER).
Kernel probabilities enter only through ``LQ[k, l] = log(1 - p_kl)`` and
``LN[k, l] = log(1 - kappa p_kl)``.
"""
import math

import numba as nb
import numpy as np

NEVER = np.int64(1 << 40)
NEG_INF = -np.inf

# prior codes
P_FIXED, P_UNIFORM, P_EXPONENTIAL, P_GAMMA = 0, 1, 2, 3

jit = nb.njit(cache=True, nogil=True)


# --------------------------------------------------------------------------
# kernels


@jit
def _pow_mass(base, expo):
    if base == 0.0:
        return 0.0
    return base ** expo


@jit
def fill_row(kind, theta, dist, sheep, cattle, k, rq, rn):
    """Row ``k`` of the log-avoidance matrices (source ``k``)."""
    n = dist.shape[0]
    nk = theta.shape[0] - 2
    kappa = theta[nk]
    if kind == 0:
        c = theta[0]
        lq = math.log1p(-c) if c < 1.0 else NEG_INF
        ln = math.log1p(-kappa * c) if kappa * c < 1.0 else NEG_INF
        for l in range(n):
            rq[l] = lq
            rn[l] = ln
    elif kind == 1:
        c = theta[0]
        g = theta[1]
        for l in range(n):
            p = c * math.exp(-g * dist[k, l])
            rq[l] = math.log1p(-p) if p < 1.0 else NEG_INF
            rn[l] = math.log1p(-kappa * p) if kappa * p < 1.0 else NEG_INF
    else:
        b0 = theta[0]
        b1 = theta[1]
        b2 = theta[2]
        x1 = theta[3]
        x2 = theta[4]
        g = theta[5]
        inf_k = _pow_mass(sheep[k] + b1 * cattle[k], x1)
        for l in range(n):
            sus_l = _pow_mass(sheep[l] + b2 * cattle[l], x2)
            rate = b0 * inf_k * sus_l * math.exp(-g * dist[k, l])
            rq[l] = -rate
            p = -math.expm1(-rate)
            rn[l] = math.log1p(-kappa * p) if kappa * p < 1.0 else NEG_INF
    rq[k] = 0.0
    rn[k] = 0.0


@jit
def fill_log_matrices(kind, theta, dist, sheep, cattle, LQ, LN):
    """Fill the log-avoidance matrices for parameters ``theta``.

    ``theta`` holds the kernel parameters followed by kappa and a.
    """
    for k in range(dist.shape[0]):
        fill_row(kind, theta, dist, sheep, cattle, k, LQ[k], LN[k])


# --------------------------------------------------------------------------
# infectious period Po(a) + 1


@jit
def log_gq(q, a):
    if q < 1:
        return NEG_INF
    return -a + (q - 1) * math.log(a) - math.lgamma(q)


@jit
def log_survival(q, a):
    """``log P(Q > q)`` by direct summation of the upper tail."""
    if q < 1:
        return 0.0
    lead = log_gq(q + 1, a)
    total = 1.0
    j = q + 2
    term = 1.0
    while True:
        term *= a / (j - 1)
        total += term
        if j - 1 > a and term < 1e-17 * total:
            break
        j += 1
    return lead + math.log(total)


@jit
def period_part(inf, notif, t, a):
    """Period factors: ``g_Q(n - i)`` where ``n`` is known, else ``P(Q > t - i)``."""
    total = 0.0
    for k in range(inf.shape[0]):
        if inf[k] <= t:
            if notif[k] < NEVER:
                total += log_gq(notif[k] - inf[k], a)
            else:
                total += log_survival(t - inf[k], a)
    return total


@jit
def g_total(inf, notif, t, a):
    total = 0.0
    for k in range(inf.shape[0]):
        if inf[k] <= t:
            total += log_gq(notif[k] - inf[k], a)
    return total


# --------------------------------------------------------------------------
# priors


@jit
def log_prior_one(code, x, p1, p2):
    if code == P_FIXED:
        return 0.0
    if code == P_UNIFORM:
        if x < p1 or x > p2:
            return NEG_INF
        return -math.log(p2 - p1)
    if x < 0.0:
        return NEG_INF
    if code == P_EXPONENTIAL:
        return -math.log(p1) - x / p1
    # gamma(shape=p1, rate=p2)
    if x == 0.0:
        if p1 > 1.0:
            return NEG_INF
        if p1 < 1.0:
            return np.inf
    return p1 * math.log(p2) - math.lgamma(p1) + (p1 - 1.0) * math.log(x) - p2 * x


@jit
def log_prior(theta, pcode, pp1, pp2):
    total = 0.0
    for j in range(theta.shape[0]):
        total += log_prior_one(pcode[j], theta[j], pp1[j], pp2[j])
    return total


# --------------------------------------------------------------------------
# transmission part of the likelihood


@jit
def first_infection(inf):
    tau = NEVER
    for k in range(inf.shape[0]):
        if inf[k] < tau:
            tau = inf[k]
    return tau


@jit
def pressure(s, inf, notif, rem, LQ, LN, lp):
    """Write ``log P_s(l)`` into ``lp`` for every l; return #sources."""
    n = inf.shape[0]
    for l in range(n):
        lp[l] = 0.0
    nsrc = 0
    for k in range(n):
        if inf[k] <= s:
            if s < notif[k]:
                row = LQ[k]
            elif s < rem[k]:
                row = LN[k]
            else:
                continue
            nsrc += 1
            for l in range(n):
                lp[l] += row[l]
    return nsrc


@jit
def day_term(s, tau, inf, notif, rem, LQ, LN, lp):
    """Log of the day-``s`` transmission factors (escapes and infections)."""
    n = inf.shape[0]
    nsrc = pressure(s, inf, notif, rem, LQ, LN, lp)
    if nsrc == 0:
        c = 0
        for l in range(n):
            if inf[l] == s + 1:
                c += 1
        if c == 0 or (c == 1 and s + 1 == tau):
            return 0.0
        return NEG_INF
    total = 0.0
    for l in range(n):
        il = inf[l]
        if il > s:
            x = lp[l]
            if il == s + 1:
                if x >= 0.0:
                    return NEG_INF
                total += math.log(-math.expm1(x))
            else:
                total += x
    return total


@jit
def trans_range(lo, hi, t, inf, notif, rem, LQ, LN, lp):
    tau = first_infection(inf)
    if tau == NEVER:
        return 0.0
    if lo < tau - 1:
        lo = tau - 1
    if hi > t - 1:
        hi = t - 1
    total = 0.0
    for s in range(lo, hi + 1):
        total += day_term(s, tau, inf, notif, rem, LQ, LN, lp)
        if total == NEG_INF:
            return NEG_INF
    return total


@jit
def trans_masked(los, his, m, t, inf, notif, rem, LQ, LN, lp):
    """Like trans_range but only over the union of ``[los[j], his[j]]``."""
    tau = first_infection(inf)
    if tau == NEVER or m == 0:
        return 0.0
    lo = los[0]
    hi = his[0]
    for j in range(1, m):
        lo = min(lo, los[j])
        hi = max(hi, his[j])
    lo = max(lo, tau - 1)
    hi = min(hi, t - 1)
    total = 0.0
    for s in range(lo, hi + 1):
        covered = False
        for j in range(m):
            if los[j] <= s <= his[j]:
                covered = True
                break
        if not covered:
            continue
        total += day_term(s, tau, inf, notif, rem, LQ, LN, lp)
        if total == NEG_INF:
            return NEG_INF
    return total


@jit
def trans_full(t, inf, notif, rem, LQ, LN, lp):
    return trans_range(-NEVER, t - 1, t, inf, notif, rem, LQ, LN, lp)


# --------------------------------------------------------------------------
# MCMC moves.  ``cache`` = [transmission, g-part, log prior].


@jit
def _accept(rng, log_alpha):
    if log_alpha >= 0.0:
        return True
    if log_alpha != log_alpha or log_alpha == NEG_INF:
        return False
    return math.log(rng.random()) < log_alpha


@jit
def _randomised_round(rng, x):
    m = int(math.floor(x))
    if rng.random() < x - m:
        m += 1
    return m


@jit
def _log_comb(n, k):
    if k < 0 or k > n:
        return NEG_INF
    return math.lgamma(n + 1.0) - math.lgamma(k + 1.0) - math.lgamma(n - k + 1.0)


@jit
def move_lambda(rng, chol, free_idx, theta, prop, kind, dist, sheep, cattle,
                pcode, pp1, pp2, LQ, LN, LQ2, LN2, inf, notif, rem, t, cache, lp):
    """Gaussian random-walk Metropolis step on the free transmission parameters."""
    d = free_idx.shape[0]
    if d == 0:
        return False
    for j in range(theta.shape[0]):
        prop[j] = theta[j]
    z = np.empty(d)
    for j in range(d):
        z[j] = rng.standard_normal()
    for r in range(d):
        acc = 0.0
        for c in range(r + 1):
            acc += chol[r, c] * z[c]
        prop[free_idx[r]] += acc
    lpr = log_prior(prop, pcode, pp1, pp2)
    if lpr == NEG_INF:
        return False
    fill_log_matrices(kind, prop, dist, sheep, cattle, LQ2, LN2)
    tnew = trans_full(t, inf, notif, rem, LQ2, LN2, lp)
    if not _accept(rng, tnew + lpr - cache[0] - cache[2]):
        return False
    for j in range(theta.shape[0]):
        theta[j] = prop[j]
    LQ[:, :] = LQ2
    LN[:, :] = LN2
    cache[0] = tnew
    cache[2] = lpr
    return True


@jit
def gibbs_a(rng, theta, inf, notif, t, shape0, rate0, pcode, pp1, pp2, cache):
    """Conjugate draw of the Poisson mean under a Gamma(shape0, rate0) prior."""
    shape = shape0
    rate = rate0
    for k in range(inf.shape[0]):
        if inf[k] <= t:
            shape += notif[k] - inf[k] - 1
            rate += 1.0
    a = rng.gamma(shape, 1.0 / rate)
    if a <= 0.0:
        a = 1e-300
    theta[theta.shape[0] - 1] = a
    cache[1] = g_total(inf, notif, t, a)
    cache[2] = log_prior(theta, pcode, pp1, pp2)


@jit
def rwm_a(rng, step, theta, inf, notif, t, pcode, pp1, pp2, cache):
    j = theta.shape[0] - 1
    old = theta[j]
    new = old + step * rng.standard_normal()
    if new <= 0.0:
        return False
    theta[j] = new
    lpr = log_prior(theta, pcode, pp1, pp2)
    gnew = g_total(inf, notif, t, new)
    if _accept(rng, gnew + lpr - cache[1] - cache[2]):
        cache[1] = gnew
        cache[2] = lpr
        return True
    theta[j] = old
    return False


@jit
def move_notified(rng, m, a, inf, notif, rem, t, LQ, LN, cache, lp, work):
    """Independence-sampler block update of notified infection times."""
    n = inf.shape[0]
    cand = work[0]
    k = 0
    for j in range(n):
        if notif[j] <= t:
            cand[k] = j
            k += 1
    if k == 0:
        return -1
    if m > k:
        m = k
    if m < 1:
        m = 1
    for j in range(m):
        r = rng.integers(j, k)
        tmp = cand[j]
        cand[j] = cand[r]
        cand[r] = tmp
    old = work[1]
    new = work[2]
    los = work[3]
    his = work[4]
    dg = 0.0
    for j in range(m):
        idx = cand[j]
        old[j] = inf[idx]
        q = rng.poisson(a) + 1
        new[j] = notif[idx] - q
        los[j] = min(old[j], new[j]) - 1
        his[j] = max(old[j], new[j]) - 1
        dg += log_gq(q, a) - log_gq(notif[idx] - old[j], a)
    t_old = trans_masked(los, his, m, t, inf, notif, rem, LQ, LN, lp)
    for j in range(m):
        inf[cand[j]] = new[j]
    t_new = trans_masked(los, his, m, t, inf, notif, rem, LQ, LN, lp)
    # proposal density g_Q(n - i') cancels the period terms
    if _accept(rng, t_new - t_old) and t_old != NEG_INF:
        cache[0] += t_new - t_old
        cache[1] += dg
        return 1
    for j in range(m):
        inf[cand[j]] = old[j]
    return 0


@jit
def move_occult_times(rng, m, a, inf, notif, rem, t, LQ, LN, cache, lp, work):
    """Block update of (infection, notification) pairs of occult cases."""
    n = inf.shape[0]
    cand = work[0]
    k = 0
    for j in range(n):
        if inf[j] <= t and notif[j] > t:
            cand[k] = j
            k += 1
    if k == 0:
        return -1
    if m > k:
        m = k
    if m < 1:
        m = 1
    for j in range(m):
        r = rng.integers(j, k)
        tmp = cand[j]
        cand[j] = cand[r]
        cand[r] = tmp
    old_i = work[1]
    new_i = work[2]
    los = work[3]
    his = work[4]
    old_n = work[5]
    new_n = work[6]
    dg = 0.0
    log_q_ratio = 0.0
    for j in range(m):
        idx = cand[j]
        old_i[j] = inf[idx]
        old_n[j] = notif[idx]
        q = rng.poisson(a) + 1
        h = rng.integers(0, q)
        new_i[j] = t - h
        new_n[j] = t - h + q
        los[j] = min(old_i[j], new_i[j]) - 1
        his[j] = max(old_i[j], new_i[j]) - 1
        q_old = old_n[j] - old_i[j]
        dg += log_gq(q, a) - log_gq(q_old, a)
        log_q_ratio += math.log(q) - math.log(q_old)
    t_old = trans_masked(los, his, m, t, inf, notif, rem, LQ, LN, lp)
    for j in range(m):
        inf[cand[j]] = new_i[j]
        notif[cand[j]] = new_n[j]
    t_new = trans_masked(los, his, m, t, inf, notif, rem, LQ, LN, lp)
    if t_old != NEG_INF and _accept(rng, t_new - t_old + log_q_ratio):
        cache[0] += t_new - t_old
        cache[1] += dg
        return 1
    for j in range(m):
        inf[cand[j]] = old_i[j]
        notif[cand[j]] = old_n[j]
    return 0


@jit
def move_occult_count(rng, e_u, a, inf, notif, rem, t, LQ, LN, cache, lp, work):
    """Add or delete up to ``e_u`` occult cases."""
    n = inf.shape[0]
    c = rng.integers(1, e_u + 1)
    if rng.random() < 0.5:
        c = -c
    occ = work[0]
    sus = work[1]
    u = 0
    ns = 0
    for j in range(n):
        if inf[j] == NEVER:
            sus[ns] = j
            ns += 1
        elif inf[j] <= t and notif[j] > t:
            occ[u] = j
            u += 1
    los = work[3]
    his = work[4]
    chosen = work[5]
    newi = work[6]
    newn = work[7]
    if c > 0:
        if c > ns:
            return 0
        for j in range(c):
            r = rng.integers(j, ns)
            tmp = sus[j]
            sus[j] = sus[r]
            sus[r] = tmp
        dg = 0.0
        slq = 0.0
        for j in range(c):
            chosen[j] = sus[j]
            q = rng.poisson(a) + 1
            h = rng.integers(0, q)
            newi[j] = t - h
            newn[j] = t - h + q
            los[j] = newi[j] - 1
            his[j] = t - 1
            dg += log_gq(q, a)
            slq += math.log(q)
        t_old = trans_masked(los, his, c, t, inf, notif, rem, LQ, LN, lp)
        for j in range(c):
            inf[chosen[j]] = newi[j]
            notif[chosen[j]] = newn[j]
        t_new = trans_masked(los, his, c, t, inf, notif, rem, LQ, LN, lp)
        log_alpha = t_new - t_old + _log_comb(ns, c) - _log_comb(u + c, c) + slq
        if t_old != NEG_INF and _accept(rng, log_alpha):
            cache[0] += t_new - t_old
            cache[1] += dg
            return 1
        for j in range(c):
            inf[chosen[j]] = NEVER
            notif[chosen[j]] = NEVER
        return 0
    k = -c
    if k > u:
        return 0
    for j in range(k):
        r = rng.integers(j, u)
        tmp = occ[j]
        occ[j] = occ[r]
        occ[r] = tmp
    dg = 0.0
    slq = 0.0
    for j in range(k):
        idx = occ[j]
        chosen[j] = idx
        newi[j] = inf[idx]
        newn[j] = notif[idx]
        q = notif[idx] - inf[idx]
        los[j] = inf[idx] - 1
        his[j] = t - 1
        dg -= log_gq(q, a)
        slq += math.log(q)
    t_old = trans_masked(los, his, k, t, inf, notif, rem, LQ, LN, lp)
    for j in range(k):
        inf[chosen[j]] = NEVER
        notif[chosen[j]] = NEVER
    t_new = trans_masked(los, his, k, t, inf, notif, rem, LQ, LN, lp)
    log_alpha = t_new - t_old - _log_comb(ns + k, k) + _log_comb(u, k) - slq
    if t_old != NEG_INF and _accept(rng, log_alpha):
        cache[0] += t_new - t_old
        cache[1] += dg
        return 1
    for j in range(k):
        inf[chosen[j]] = newi[j]
        notif[chosen[j]] = newn[j]
    return 0


# --------------------------------------------------------------------------
# chain driver

# indices into the integer settings vector
S_KIND, S_ZETA, S_EU, S_NSWEEP, S_THIN, S_ADAPT, S_T, S_SIGMA_EVERY = range(8)
# indices into the float tuning vector
F_ALPHA, F_M, F_MU, F_ASTEP, F_SHAPE0, F_RATE0, F_GAIN = range(7)
# zeta modes
ZETA_FIXED, ZETA_GIBBS, ZETA_RWM = 0, 1, 2
# rows of the acceptance counter
C_LAMBDA, C_ZETA, C_NOTIFIED, C_OCC_TIMES, C_OCC_COUNT = range(5)


@jit
def cholesky_or_diag(S, out):
    """Lower Cholesky factor of ``S``; falls back to a diagonal factor."""
    d = S.shape[0]
    ok = True
    for i in range(d):
        for j in range(d):
            out[i, j] = 0.0
    for j in range(d):
        s = S[j, j]
        for k in range(j):
            s -= out[j, k] * out[j, k]
        if not s > 0.0:
            ok = False
            break
        out[j, j] = math.sqrt(s)
        for i in range(j + 1, d):
            s2 = S[i, j]
            for k in range(j):
                s2 -= out[i, k] * out[j, k]
            out[i, j] = s2 / out[j, j]
    if not ok:
        for i in range(d):
            for j in range(d):
                out[i, j] = 0.0
            v = S[i, i]
            out[i, i] = math.sqrt(v) if v > 0.0 else 1e-6
    return ok


@jit
def _cov(samples, lo, hi, out):
    d = samples.shape[1]
    cnt = hi - lo
    mean = np.zeros(d)
    for r in range(lo, hi):
        for j in range(d):
            mean[j] += samples[r, j]
    for j in range(d):
        mean[j] /= max(cnt, 1)
    for i in range(d):
        for j in range(d):
            acc = 0.0
            for r in range(lo, hi):
                acc += (samples[r, i] - mean[i]) * (samples[r, j] - mean[j])
            out[i, j] = acc / max(cnt - 1, 1)


@jit
def count_occult(inf, notif, t):
    u = 0
    for j in range(inf.shape[0]):
        if inf[j] <= t and notif[j] > t:
            u += 1
    return u


@jit
def run_chain(rng, iset, fset, theta, free_idx, sigma, scale0, kind, dist, sheep, cattle,
              pcode, pp1, pp2, inf, notif, rem, cache, out_theta, out_stats, out_inf,
              out_notif, counts):
    """Run ``iset[S_NSWEEP]`` sweeps of the five-move kernel in place.

    With ``iset[S_ADAPT]`` set, the random-walk scale ``fset[F_ALPHA]`` and
    the block sizes ``fset[F_M]``, ``fset[F_MU]`` adapt toward 25%
    acceptance, the proposal shape starts at ``diag(scale0**2)`` and is
    refreshed from the draws every ``iset[S_SIGMA_EVERY]`` sweeps, and on
    return ``sigma`` holds the empirical covariance of the second half of
    the run.  Otherwise ``sigma`` is the fixed proposal covariance.

    Every ``iset[S_THIN]``-th state is written to ``out_theta`` and
    ``out_stats`` (log-likelihood, occult count, first infection day)
    until they are full; ``out_inf`` and ``out_notif`` receive the
    augmentation too unless they have zero columns.  ``counts[move] += [proposed, accepted]``.
    Returns the number of stored states.
    """
    n = inf.shape[0]
    t = iset[S_T]
    nsweep = iset[S_NSWEEP]
    thin = max(iset[S_THIN], 1)
    adapt = iset[S_ADAPT] != 0
    zeta = iset[S_ZETA]
    e_u = iset[S_EU]
    every = max(iset[S_SIGMA_EVERY], 1)
    d = free_idx.shape[0]
    P = theta.shape[0]
    LQ = np.empty((n, n))
    LN = np.empty((n, n))
    LQ2 = np.empty((n, n))
    LN2 = np.empty((n, n))
    lp = np.empty(n)
    prop = np.empty(P)
    work = np.empty((8, n + 1), dtype=np.int64)
    chol = np.zeros((d, d))
    shape_m = np.zeros((d, d))
    draws = np.empty((nsweep if adapt else 1, max(d, 1)))
    fill_log_matrices(kind, theta, dist, sheep, cattle, LQ, LN)
    cache[0] = trans_full(t, inf, notif, rem, LQ, LN, lp)
    cache[1] = g_total(inf, notif, t, theta[P - 1])
    cache[2] = log_prior(theta, pcode, pp1, pp2)
    alpha = fset[F_ALPHA]
    gain = fset[F_GAIN]
    if adapt:
        for j in range(d):
            shape_m[j, j] = scale0[j] * scale0[j]
            chol[j, j] = math.sqrt(alpha) * scale0[j]
    else:
        cholesky_or_diag(sigma, chol)
    nnot = 0
    for j in range(n):
        if notif[j] <= t:
            nnot += 1
    nout = 0
    for sweep in range(nsweep):
        if d > 0:
            ok = move_lambda(rng, chol, free_idx, theta, prop, kind, dist, sheep, cattle,
                             pcode, pp1, pp2, LQ, LN, LQ2, LN2, inf, notif, rem, t, cache, lp)
            counts[C_LAMBDA, 0] += 1
            counts[C_LAMBDA, 1] += 1 if ok else 0
            if adapt:
                alpha *= math.exp(gain * ((1.0 if ok else 0.0) - 0.25))
        if zeta == ZETA_GIBBS:
            gibbs_a(rng, theta, inf, notif, t, fset[F_SHAPE0], fset[F_RATE0],
                    pcode, pp1, pp2, cache)
            counts[C_ZETA, 0] += 1
            counts[C_ZETA, 1] += 1
        elif zeta == ZETA_RWM:
            ok = rwm_a(rng, fset[F_ASTEP], theta, inf, notif, t, pcode, pp1, pp2, cache)
            counts[C_ZETA, 0] += 1
            counts[C_ZETA, 1] += 1 if ok else 0
        a = theta[P - 1]
        m = _randomised_round(rng, fset[F_M])
        r = move_notified(rng, m, a, inf, notif, rem, t, LQ, LN, cache, lp, work)
        if r >= 0:
            counts[C_NOTIFIED, 0] += 1
            counts[C_NOTIFIED, 1] += r
            if adapt:
                fset[F_M] = min(max(fset[F_M] * math.exp(gain * (r - 0.25)), 1.0),
                                float(max(nnot, 1)))
        mu = _randomised_round(rng, fset[F_MU])
        u_now = count_occult(inf, notif, t) if adapt else 0
        r = move_occult_times(rng, mu, a, inf, notif, rem, t, LQ, LN, cache, lp, work)
        if r >= 0:
            counts[C_OCC_TIMES, 0] += 1
            counts[C_OCC_TIMES, 1] += r
            # a block that already held every occult says nothing about larger blocks
            if adapt and not (r == 1 and mu >= u_now):
                fset[F_MU] = min(max(fset[F_MU] * math.exp(gain * (r - 0.25)), 1.0),
                                 float(n))
        r = move_occult_count(rng, e_u, a, inf, notif, rem, t, LQ, LN, cache, lp, work)
        counts[C_OCC_COUNT, 0] += 1
        counts[C_OCC_COUNT, 1] += r
        if adapt and d > 0:
            for j in range(d):
                draws[sweep, j] = theta[free_idx[j]]
            if sweep + 1 >= 2 * every and (sweep + 1) % every == 0:
                _cov(draws, (sweep + 1) // 2, sweep + 1, shape_m)
                for j in range(d):
                    floor = scale0[j] * scale0[j] * 1e-6
                    if not shape_m[j, j] > floor:
                        shape_m[j, j] = floor
            for i in range(d):
                for j in range(d):
                    sigma[i, j] = alpha * shape_m[i, j]
            cholesky_or_diag(sigma, chol)
        if (sweep + 1) % thin == 0 and nout < out_theta.shape[0]:
            for j in range(P):
                out_theta[nout, j] = theta[j]
            out_stats[nout, 0] = cache[0] + cache[1]
            out_stats[nout, 1] = count_occult(inf, notif, t)
            out_stats[nout, 2] = first_infection(inf)
            if out_inf.shape[1] == n:
                for j in range(n):
                    out_inf[nout, j] = inf[j]
                    out_notif[nout, j] = notif[j]
            nout += 1
    if adapt and d > 0:
        _cov(draws, nsweep // 2, nsweep, sigma)
    fset[F_ALPHA] = alpha
    return nout


# --------------------------------------------------------------------------
# sequential Monte Carlo helpers


@jit
def draw_period_beyond(rng, a, h):
    """Draw ``Q ~ Po(a) + 1`` conditioned on ``Q > h`` by inversion."""
    if h < 1:
        return rng.poisson(a) + 1
    # terms relative to g(h + 1)
    total = 1.0
    term = 1.0
    j = h + 2
    while True:
        term *= a / (j - 1)
        total += term
        if j - 1 > a and term < 1e-17 * total:
            break
        j += 1
    u = rng.random() * total
    acc = 1.0
    term = 1.0
    q = h + 1
    while acc < u:
        q += 1
        term *= a / (q - 1)
        acc += term
        if term < 1e-300:
            break
    return q


@jit
def propagate(rng, theta, kind, dist, sheep, cattle, inf, notif, rem, t):
    """Draw day-``t`` infections from the day ``t - 1`` pressure, then
    notification days beyond ``t`` for every occult case lacking one.

    Returns the number of new infections.
    """
    n = inf.shape[0]
    lp = np.zeros(n)
    rq = np.empty(n)
    rn = np.empty(n)
    s = t - 1
    nsrc = 0
    for k in range(n):
        if inf[k] <= s:
            if s < notif[k]:
                fill_row(kind, theta, dist, sheep, cattle, k, rq, rn)
                for l in range(n):
                    lp[l] += rq[l]
                nsrc += 1
            elif s < rem[k]:
                fill_row(kind, theta, dist, sheep, cattle, k, rq, rn)
                for l in range(n):
                    lp[l] += rn[l]
                nsrc += 1
    new = 0
    if nsrc > 0:
        for l in range(n):
            if inf[l] == NEVER:
                if rng.random() < -math.expm1(lp[l]):
                    inf[l] = t
                    new += 1
    a = theta[theta.shape[0] - 1]
    for k in range(n):
        if inf[k] <= t and notif[k] == NEVER:
            notif[k] = inf[k] + draw_period_beyond(rng, a, t - inf[k])
    return new


@jit
def observation_factor(inf, notif_obs, t, a):
    """Log-probability of exactly the day-``t`` notifications given infections to ``t - 1``."""
    total = 0.0
    for k in range(inf.shape[0]):
        i = inf[k]
        if i <= t - 1 and notif_obs[k] >= t:
            q = t - i
            base = log_survival(q - 1, a)
            if notif_obs[k] == t:
                total += log_gq(q, a) - base
            else:
                total += log_survival(q, a) - base
        elif notif_obs[k] == t:
            return NEG_INF
    return total
