"""Compiled Gibbs sweep for the censored random intercept/slope model.

All randomness is drawn by the caller from a numpy Generator and passed in as
arrays, so a chain is a deterministic function of its inputs.

Model, for patient i in arm k (k = 0 is control) at week T:

    y = b0_i + b1_i * T + beta_arm[k] * T + e,     e ~ N(0, sigma_e^2)
    (b0_i, b1_i) = (beta0, beta1) + u_i,            u_i ~ N(0, Sigma)

A sweep draws, in order: latent censored responses (truncated normal above the
limit); fixed effects with the random effects integrated out; each u_i given
the fixed effects; Sigma from its inverse-Wishart conditional; sigma_e^2 from
its inverse-gamma conditional.  The fixed-effect and random-effect steps
together are an exact joint draw of (beta, u) given (Sigma, sigma_e^2).
"""

import math

import numpy as np
from numba import njit

_SQRT1_2 = 0.7071067811865476
# beyond this many SDs erfc loses precision; use the exponential tail instead
_TAIL_SWITCH = 26.0


@njit(cache=False)
def ndtri(p):
    """Inverse standard normal CDF (Wichura's AS241, about 1e-16 relative)."""
    q = p - 0.5
    if abs(q) <= 0.425:
        r = 0.180625 - q * q
        num = (((((((2509.0809287301226727 * r + 33430.575583588128105) * r
                    + 67265.770927008700853) * r + 45921.953931549871457) * r
                  + 13731.693765509461125) * r + 1971.5909503065514427) * r
                + 133.14166789178437745) * r + 3.387132872796366608)
        den = (((((((5226.495278852545925 * r + 28729.085735721942674) * r
                    + 39307.89580009271061) * r + 21213.794301586595867) * r
                  + 5394.1960214247511077) * r + 687.1870074920579083) * r
                + 42.313330701600911252) * r + 1.0)
        return q * num / den
    r = p if q < 0.0 else 1.0 - p
    r = math.sqrt(-math.log(r))
    if r <= 5.0:
        r -= 1.6
        num = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r
                    + 0.24178072517745061177) * r + 1.27045825245236838258) * r
                  + 3.64784832476320460504) * r + 5.7694972214606914055) * r
                + 4.6303378461565452959) * r + 1.42343711074968357734)
        den = (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r
                    + 0.0151986665636164571966) * r + 0.14810397642748007459) * r
                  + 0.68976733498510000455) * r + 1.6763848301838038494) * r
                + 2.05319162663775882187) * r + 1.0)
    else:
        r -= 5.0
        num = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r
                    + 0.0012426609473880784386) * r + 0.026532189526576123093) * r
                  + 0.29656057182850489123) * r + 1.7848265399172913358) * r
                + 5.4637849111641143699) * r + 6.6579046435011037772)
        den = (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r
                    + 1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r
                  + 0.0148753612908506148525) * r + 0.13692988092273580531) * r
                + 0.59983220655588793769) * r + 1.0)
    val = num / den
    return -val if q < 0.0 else val


@njit(cache=False)
def truncnorm_above(mu, sigma, lower, u):
    """Draw from N(mu, sigma^2) restricted to (lower, inf) by inversion; ``u`` in (0, 1]."""
    a = (lower - mu) / sigma
    if a < _TAIL_SWITCH:
        tail = 0.5 * math.erfc(a * _SQRT1_2)
        x = -ndtri(u * tail)
    else:
        x = a - math.log(u) / a
    y = mu + sigma * x
    if y <= lower:
        y = np.nextafter(lower, np.inf)
    return y


@njit(cache=False)
def _chol_solve_draw(P, b, z):
    """Return mean + L^-T z where P = L L^T and mean = P^-1 b."""
    p = P.shape[0]
    L = np.linalg.cholesky(P)
    # forward solve L w = b
    w = np.empty(p)
    for i in range(p):
        s = b[i]
        for j in range(i):
            s -= L[i, j] * w[j]
        w[i] = s / L[i, i]
    # back solve L^T x = w + z
    x = np.empty(p)
    for i in range(p - 1, -1, -1):
        s = w[i] + z[i]
        for j in range(i + 1, p):
            s -= L[j, i] * x[j]
        x[i] = s / L[i, i]
    return x


@njit(cache=False)
def run_chain(
    obs_start,
    obs_stop,
    patient_arm,
    week,
    y_init,
    cens_index,
    cens_patient,
    censor_limit,
    n_arms,
    prior_mean,
    prior_prec,
    ig_shape,
    ig_scale,
    iw_df,
    iw_scale,
    random_effects,
    fixed_sigma_e2,
    beta_init,
    sigma_init,
    sigma_e2_init,
    z_beta,
    z_u,
    z_iw,
    chi2_iw,
    gamma_ig,
    u_cens,
):
    """Run one chain; returns (draws, min_latent_excess).

    ``draws`` columns: beta0, beta1, beta_arm[1..K-1], sigma_g1, sigma_g2,
    rho, sigma_e.  ``fixed_sigma_e2 <= 0`` means sigma_e^2 is sampled.
    """
    n_iter = z_beta.shape[0]
    n_pat = patient_arm.shape[0]
    n_cens = cens_index.shape[0]
    p = n_arms + 1
    out = np.empty((n_iter, p + 4))
    min_excess = np.full(n_iter, np.inf)

    y = y_init.copy()
    beta = beta_init.copy()
    Sigma = sigma_init.copy()
    s2 = sigma_e2_init if fixed_sigma_e2 <= 0.0 else fixed_sigma_e2
    u = np.zeros((n_pat, 2))

    # per-patient Z'Z, constant across iterations
    A = np.zeros((n_pat, 2, 2))
    for i in range(n_pat):
        for o in range(obs_start[i], obs_stop[i]):
            t = week[o]
            A[i, 0, 0] += 1.0
            A[i, 0, 1] += t
            A[i, 1, 1] += t * t
        A[i, 1, 0] = A[i, 0, 1]

    zy = np.zeros((n_pat, 2))
    G = np.empty((2, 2))
    Ginv = np.empty((2, 2))
    M = np.empty((2, 2))
    w = np.empty(2)

    for it in range(n_iter):
        # (1) latent responses for censored visits
        for c in range(n_cens):
            o = cens_index[c]
            i = cens_patient[c]
            k = patient_arm[i]
            slope = beta[1] + u[i, 1]
            if k > 0:
                slope += beta[1 + k]
            mu = beta[0] + u[i, 0] + slope * week[o]
            y[o] = truncnorm_above(mu, math.sqrt(s2), censor_limit, u_cens[it, c])
            excess = y[o] - censor_limit
            if excess < min_excess[it]:
                min_excess[it] = excess

        for i in range(n_pat):
            s0 = 0.0
            s1 = 0.0
            for o in range(obs_start[i], obs_stop[i]):
                s0 += y[o]
                s1 += week[o] * y[o]
            zy[i, 0] = s0
            zy[i, 1] = s1

        # (2) fixed effects, random effects integrated out
        P = np.zeros((p, p))
        b = np.zeros(p)
        for i in range(n_pat):
            if random_effects:
                G[0, 0] = s2 + A[i, 0, 0] * Sigma[0, 0] + A[i, 0, 1] * Sigma[1, 0]
                G[0, 1] = A[i, 0, 0] * Sigma[0, 1] + A[i, 0, 1] * Sigma[1, 1]
                G[1, 0] = A[i, 1, 0] * Sigma[0, 0] + A[i, 1, 1] * Sigma[1, 0]
                G[1, 1] = s2 + A[i, 1, 0] * Sigma[0, 1] + A[i, 1, 1] * Sigma[1, 1]
                det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
                Ginv[0, 0] = G[1, 1] / det
                Ginv[0, 1] = -G[0, 1] / det
                Ginv[1, 0] = -G[1, 0] / det
                Ginv[1, 1] = G[0, 0] / det
                for r in range(2):
                    for s in range(2):
                        M[r, s] = Ginv[r, 0] * A[i, 0, s] + Ginv[r, 1] * A[i, 1, s]
                    w[r] = Ginv[r, 0] * zy[i, 0] + Ginv[r, 1] * zy[i, 1]
            else:
                for r in range(2):
                    for s in range(2):
                        M[r, s] = A[i, r, s] / s2
                    w[r] = zy[i, r] / s2
            # X_i = Z_i C_i, C_i maps (intercept, slope) onto beta columns
            k = patient_arm[i]
            P[0, 0] += M[0, 0]
            P[0, 1] += M[0, 1]
            P[1, 0] += M[1, 0]
            P[1, 1] += M[1, 1]
            b[0] += w[0]
            b[1] += w[1]
            if k > 0:
                c = 1 + k
                P[0, c] += M[0, 1]
                P[c, 0] += M[1, 0]
                P[1, c] += M[1, 1]
                P[c, 1] += M[1, 1]
                P[c, c] += M[1, 1]
                b[c] += w[1]
        for j in range(p):
            P[j, j] += prior_prec[j]
            b[j] += prior_prec[j] * prior_mean[j]
        # symmetrize against rounding before Cholesky
        for r in range(p):
            for s in range(r):
                avg = 0.5 * (P[r, s] + P[s, r])
                P[r, s] = avg
                P[s, r] = avg
        beta = _chol_solve_draw(P, b, z_beta[it])

        # (3) random effects given beta
        if random_effects:
            for i in range(n_pat):
                k = patient_arm[i]
                m0 = beta[0]
                m1 = beta[1] + (beta[1 + k] if k > 0 else 0.0)
                r0 = zy[i, 0] - A[i, 0, 0] * m0 - A[i, 0, 1] * m1
                r1 = zy[i, 1] - A[i, 1, 0] * m0 - A[i, 1, 1] * m1
                G[0, 0] = s2 + A[i, 0, 0] * Sigma[0, 0] + A[i, 0, 1] * Sigma[1, 0]
                G[0, 1] = A[i, 0, 0] * Sigma[0, 1] + A[i, 0, 1] * Sigma[1, 1]
                G[1, 0] = A[i, 1, 0] * Sigma[0, 0] + A[i, 1, 1] * Sigma[1, 0]
                G[1, 1] = s2 + A[i, 1, 0] * Sigma[0, 1] + A[i, 1, 1] * Sigma[1, 1]
                det = G[0, 0] * G[1, 1] - G[0, 1] * G[1, 0]
                Ginv[0, 0] = G[1, 1] / det
                Ginv[0, 1] = -G[0, 1] / det
                Ginv[1, 0] = -G[1, 0] / det
                Ginv[1, 1] = G[0, 0] / det
                # mean = Sigma Ginv Z'r, cov = Sigma - Sigma Ginv A Sigma
                g0 = Ginv[0, 0] * r0 + Ginv[0, 1] * r1
                g1 = Ginv[1, 0] * r0 + Ginv[1, 1] * r1
                mean0 = Sigma[0, 0] * g0 + Sigma[0, 1] * g1
                mean1 = Sigma[1, 0] * g0 + Sigma[1, 1] * g1
                for r in range(2):
                    for s in range(2):
                        M[r, s] = Ginv[r, 0] * A[i, 0, s] + Ginv[r, 1] * A[i, 1, s]
                # H = M Sigma, cov = Sigma - Sigma H
                h00 = M[0, 0] * Sigma[0, 0] + M[0, 1] * Sigma[1, 0]
                h01 = M[0, 0] * Sigma[0, 1] + M[0, 1] * Sigma[1, 1]
                h10 = M[1, 0] * Sigma[0, 0] + M[1, 1] * Sigma[1, 0]
                h11 = M[1, 0] * Sigma[0, 1] + M[1, 1] * Sigma[1, 1]
                c00 = Sigma[0, 0] - (Sigma[0, 0] * h00 + Sigma[0, 1] * h10)
                c11 = Sigma[1, 1] - (Sigma[1, 0] * h01 + Sigma[1, 1] * h11)
                c01 = Sigma[0, 1] - (Sigma[0, 0] * h01 + Sigma[0, 1] * h11)
                c10 = Sigma[1, 0] - (Sigma[1, 0] * h00 + Sigma[1, 1] * h10)
                c01 = 0.5 * (c01 + c10)
                l00 = math.sqrt(c00) if c00 > 0.0 else 0.0
                l10 = c01 / l00 if l00 > 0.0 else 0.0
                rem = c11 - l10 * l10
                l11 = math.sqrt(rem) if rem > 0.0 else 0.0
                za = z_u[it, i, 0]
                zb = z_u[it, i, 1]
                u[i, 0] = mean0 + l00 * za
                u[i, 1] = mean1 + l10 * za + l11 * zb

            # (4) Sigma | u ~ IW(df + n, scale + sum u u'), via Bartlett on the Wishart inverse
            S00 = iw_scale[0, 0]
            S01 = iw_scale[0, 1]
            S11 = iw_scale[1, 1]
            for i in range(n_pat):
                S00 += u[i, 0] * u[i, 0]
                S01 += u[i, 0] * u[i, 1]
                S11 += u[i, 1] * u[i, 1]
            det = S00 * S11 - S01 * S01
            Q00 = S11 / det
            Q01 = -S01 / det
            Q11 = S00 / det
            L00 = math.sqrt(Q00)
            L10 = Q01 / L00
            L11 = math.sqrt(max(Q11 - L10 * L10, 0.0))
            a00 = math.sqrt(chi2_iw[it, 0])
            a10 = z_iw[it]
            a11 = math.sqrt(chi2_iw[it, 1])
            # B = L A (lower triangular), W = B B'
            B00 = L00 * a00
            B10 = L10 * a00 + L11 * a10
            B11 = L11 * a11
            W00 = B00 * B00
            W01 = B00 * B10
            W11 = B10 * B10 + B11 * B11
            det = W00 * W11 - W01 * W01
            Sigma[0, 0] = W11 / det
            Sigma[0, 1] = -W01 / det
            Sigma[1, 0] = -W01 / det
            Sigma[1, 1] = W00 / det

        # (5) residual variance
        if fixed_sigma_e2 <= 0.0:
            sse = 0.0
            for i in range(n_pat):
                k = patient_arm[i]
                m0 = beta[0] + u[i, 0]
                m1 = beta[1] + u[i, 1] + (beta[1 + k] if k > 0 else 0.0)
                for o in range(obs_start[i], obs_stop[i]):
                    r = y[o] - m0 - m1 * week[o]
                    sse += r * r
            s2 = (ig_scale + 0.5 * sse) / gamma_ig[it]

        for j in range(p):
            out[it, j] = beta[j]
        sd0 = math.sqrt(Sigma[0, 0]) if Sigma[0, 0] > 0.0 else 0.0
        sd1 = math.sqrt(Sigma[1, 1]) if Sigma[1, 1] > 0.0 else 0.0
        out[it, p] = sd0
        out[it, p + 1] = sd1
        out[it, p + 2] = Sigma[0, 1] / (sd0 * sd1) if sd0 > 0.0 and sd1 > 0.0 else 0.0
        out[it, p + 3] = math.sqrt(s2)

    return out, min_excess
