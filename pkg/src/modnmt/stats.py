"""OLS over the score grid: architecture/condition predictors with interactions.

The design mirrors the experiment's factorial structure: bridge and
encoder-sharing indicators, zero-shot and OOD condition flags, source/target
language one-hots against the first language as reference level, the training
corpus, and the four design-by-condition interaction terms. D-kind cells are
excluded from the regression. Fitting uses a QR decomposition; p-values come
from a local t-distribution CDF (continued-fraction incomplete beta), so no
statistics library is required.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

INTERACTIONS = (
    ("has bridge", "zero shot"),
    ("has bridge", "OOD"),
    ("shares enc", "zero shot"),
    ("shares enc", "OOD"),
)


@dataclass
class DesignMatrix:
    matrix: np.ndarray
    labels: list
    notices: list
    reference: dict

    def header_lines(self):
        lines = [
            "encoding: intercept = "
            f"N-type, not zero-shot, not OOD, from & to {self.reference['language']}, "
            f"trained on {self.reference['other_domain']}",
        ]
        lines += [f"notice: {n}" for n in self.notices]
        return lines


@dataclass
class OlsFit:
    coef: np.ndarray
    stderr: np.ndarray
    tstat: np.ndarray
    pvalue: np.ndarray
    r_squared: float
    df_resid: int
    n_obs: int


# ---------------------------------------------------------------------------
# design construction


def build_design(cells, exclude_kinds=("D",)):
    """EvalCells -> (DesignMatrix, response). Absent cells and D-kind are dropped."""
    rows = [c for c in cells if c.bleu is not None and c.kind not in exclude_kinds]
    if not rows:
        raise ValueError("no usable cells after exclusions")
    langs = sorted({c.src for c in rows} | {c.tgt for c in rows})
    domains = sorted({c.train_domain for c in rows})
    ref_lang = langs[0]
    domain_a = domains[0]
    other_domain = domains[1] if len(domains) > 1 else "(only domain)"

    base = {
        "has bridge": [1.0 if c.kind in ("T", "L") else 0.0 for c in rows],
        "shares enc": [1.0 if c.kind in ("F", "E") else 0.0 for c in rows],
        "zero shot": [0.0 if c.seen else 1.0 for c in rows],
        "OOD": [1.0 if c.ood else 0.0 for c in rows],
    }
    columns = [("Intercept", np.ones(len(rows)))]
    for name in ("has bridge", "shares enc", "zero shot", "OOD"):
        columns.append((name, np.array(base[name])))
    for lang in langs:
        if lang == ref_lang:
            continue
        columns.append((f"from {lang}", np.array([1.0 if c.src == lang else 0.0 for c in rows])))
    for lang in langs:
        if lang == ref_lang:
            continue
        columns.append((f"to {lang}", np.array([1.0 if c.tgt == lang else 0.0 for c in rows])))
    columns.append((f"trained on {domain_a}",
                    np.array([1.0 if c.train_domain == domain_a else 0.0 for c in rows])))
    lookup = dict(columns)
    for a, b in INTERACTIONS:
        columns.append((f"{a}×{b}", lookup[a] * lookup[b]))

    notices = []
    kept = [columns[0]]
    for name, col in columns[1:]:
        if np.ptp(col) == 0.0:
            notices.append(f"dropped constant column {name!r} (value {col[0]:g} everywhere)")
        else:
            kept.append((name, col))

    X = np.column_stack([col for _, col in kept])
    y = np.array([c.bleu for c in rows])
    dm = DesignMatrix(
        matrix=X,
        labels=[name for name, _ in kept],
        notices=notices,
        reference={"language": ref_lang, "domain": domain_a, "other_domain": other_domain},
    )
    return dm, y


# ---------------------------------------------------------------------------
# the t distribution, self-contained


def _betacf(a, b, x, max_iter=300, eps=1e-15):
    """Continued fraction for the regularized incomplete beta function."""
    tiny = 1e-300
    qab, qap, qam = a + b, a + 1.0, a - 1.0
    c = 1.0
    d = 1.0 - qab * x / qap
    if abs(d) < tiny:
        d = tiny
    d = 1.0 / d
    h = d
    for m in range(1, max_iter + 1):
        m2 = 2 * m
        aa = m * (b - m) * x / ((qam + m2) * (a + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        h *= d * c
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2))
        d = 1.0 + aa * d
        if abs(d) < tiny:
            d = tiny
        c = 1.0 + aa / c
        if abs(c) < tiny:
            c = tiny
        d = 1.0 / d
        delta = d * c
        h *= delta
        if abs(delta - 1.0) < eps:
            return h
    raise RuntimeError(f"incomplete beta did not converge for a={a}, b={b}, x={x}")


def incomplete_beta(a, b, x):
    """Regularized incomplete beta I_x(a, b), accurate to ~1e-13."""
    if x <= 0.0:
        return 0.0
    if x >= 1.0:
        return 1.0
    ln_front = (math.lgamma(a + b) - math.lgamma(a) - math.lgamma(b)
                + a * math.log(x) + b * math.log1p(-x))
    front = math.exp(ln_front)
    if x < (a + 1.0) / (a + b + 2.0):
        return front * _betacf(a, b, x) / a
    return 1.0 - front * _betacf(b, a, 1.0 - x) / b


def t_two_sided_p(t, df):
    """Two-sided p-value of a t statistic; depends only on |t| and df."""
    t = abs(float(t))
    if df <= 0:
        raise ValueError(f"need positive degrees of freedom, got {df}")
    return incomplete_beta(df / 2.0, 0.5, df / (df + t * t))


# ---------------------------------------------------------------------------
# fitting


def ols_fit(X, y, labels=None):
    """Least squares via QR; homoskedastic standard errors and t tests.

    Raises on rank deficiency, naming the offending column.
    """
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64).ravel()
    n, p = X.shape
    if y.shape[0] != n:
        raise ValueError(f"X has {n} rows but y has {y.shape[0]}")
    if n <= p:
        raise ValueError(f"need more rows ({n}) than columns ({p})")
    q, r = np.linalg.qr(X)
    diag = np.abs(np.diag(r))
    tol = max(n, p) * np.finfo(np.float64).eps * (diag.max() if diag.size else 0.0)
    deficient = np.nonzero(diag <= tol)[0]
    if deficient.size:
        j = int(deficient[0])
        name = labels[j] if labels else f"column {j}"
        raise ValueError(f"design matrix is rank deficient at {name}")
    coef = np.linalg.solve(r, q.T @ y)
    resid = y - X @ coef
    rss = float(resid @ resid)
    df = n - p
    sigma2 = rss / df
    r_inv = np.linalg.solve(r, np.eye(p))
    xtx_inv = r_inv @ r_inv.T
    stderr = np.sqrt(sigma2 * np.diag(xtx_inv))
    tstat = coef / stderr
    pvalue = np.array([t_two_sided_p(t, df) for t in tstat])
    tss = float(((y - y.mean()) ** 2).sum())
    r_squared = 1.0 - rss / tss if tss > 0 else 1.0
    return OlsFit(coef=coef, stderr=stderr, tstat=tstat, pvalue=pvalue,
                  r_squared=r_squared, df_resid=df, n_obs=n)


def fit_cells(cells, exclude_kinds=("D",)):
    """Convenience: build the design and fit it. Returns (design, fit)."""
    dm, y = build_design(cells, exclude_kinds=exclude_kinds)
    return dm, ols_fit(dm.matrix, y, labels=dm.labels)


# ---------------------------------------------------------------------------
# reporting


def report_table(fit, labels, header_lines=()):
    """Aligned coef / std err / t / P>|t| table, main effects before interactions."""
    if len(labels) != fit.coef.shape[0]:
        raise ValueError(f"{len(labels)} labels for {fit.coef.shape[0]} coefficients")
    name_w = max(len(l) for l in labels) + 2
    lines = list(header_lines)
    lines.append(f"n = {fit.n_obs}, residual df = {fit.df_resid}, "
                 f"R^2 = {fit.r_squared:.3f}")
    lines.append(f"{'':<{name_w}}{'coef':>12}{'std err':>10}{'t':>10}{'P>|t|':>8}")
    for i, label in enumerate(labels):
        lines.append(
            f"{label:<{name_w}}{fit.coef[i]:>12.4f}{fit.stderr[i]:>10.3f}"
            f"{fit.tstat[i]:>10.3f}{fit.pvalue[i]:>8.3f}")
    return "\n".join(lines) + "\n"


def report_tsv(fit, labels):
    lines = ["label\tcoef\tstd_err\tt\tp"]
    for i, label in enumerate(labels):
        lines.append(f"{label}\t{fit.coef[i]:.6f}\t{fit.stderr[i]:.6f}"
                     f"\t{fit.tstat[i]:.6f}\t{fit.pvalue[i]:.6g}")
    return "\n".join(lines) + "\n"


def permutation_importance(X, y, labels, seed=0, repeats=5):
    """Mean R^2 drop when one predictor is shuffled.

    Diagnostic plumbing only; this is a stability probe, not an effects
    analysis, and makes no significance claims.
    """
    X = np.asarray(X, dtype=np.float64)
    rng = np.random.default_rng(seed)
    base = ols_fit(X, y).r_squared
    out = []
    for j, label in enumerate(labels):
        if label == "Intercept":
            continue
        drops = []
        for _ in range(repeats):
            Xp = X.copy()
            Xp[:, j] = rng.permutation(Xp[:, j])
            try:
                drops.append(base - ols_fit(Xp, y).r_squared)
            except ValueError:  # permutation made the column collinear
                continue
        out.append((label, float(np.mean(drops)) if drops else float("nan")))
    out.sort(key=lambda kv: -kv[1])
    return out
