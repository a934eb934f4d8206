"""Developer-month outcome panel built from commit-level records."""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
import pandas as pd

from ._backend import get_kernels
from .errors import ValidationError

OUTCOMES = (
    "n_commits",
    "n_repos",
    "n_languages",
    "language_entropy",
    "n_new_languages",
    "cumulative_languages",
)
OPTIONAL_OUTCOMES = ("n_sectors",)
_KERNEL_COLUMNS = OUTCOMES + ("n_sectors",)

RECORD_COLUMNS = ("developer_id", "month", "repo_id", "language_id", "sector_id", "n_commits")
ADOPTION_COLUMNS = ("developer_id", "first_treat")
PANEL_COLUMNS = ("developer_id", "month", "first_treat") + OUTCOMES

BOT_PATTERNS = (
    "[bot]",
    "-bot",
    "_bot",
    "bot-",
    "dependabot",
    "renovate",
    "github-actions",
    "codecov",
    "greenkeeper",
    "snyk",
)


def filter_bot_login(login):
    """True if ``login`` looks like an automation account."""
    low = str(login).lower()
    return any(p in low for p in BOT_PATTERNS)


def shannon_entropy(shares, tol=1e-9):
    """Natural-log Shannon entropy of a share vector (0 log 0 = 0)."""
    p = np.asarray(shares, dtype=float).ravel()
    if p.size == 0:
        raise ValidationError("shares must be non-empty")
    if np.any(p < 0) or np.any(p > 1):
        raise ValidationError("shares must lie in [0, 1]")
    if abs(math.fsum(p) - 1.0) > tol:
        raise ValidationError(f"shares must sum to 1, got {math.fsum(p)!r}")
    nz = p[p > 0]
    return float(max(0.0, -math.fsum(nz * np.log(nz))))


@dataclass(frozen=True)
class CommitRecord:
    developer_id: object
    month: int
    repo_id: object
    language_id: object
    sector_id: object
    n_commits: int


@dataclass
class CommitTable:
    """Columnar store of commit records.

    Iterating yields :class:`CommitRecord` objects; the simulator and the
    panel builder work on the arrays directly.
    """

    developer_id: np.ndarray
    month: np.ndarray
    repo_id: np.ndarray
    language_id: np.ndarray
    sector_id: np.ndarray
    n_commits: np.ndarray

    def __len__(self):
        return len(self.month)

    def __iter__(self):
        cols = [getattr(self, c) for c in RECORD_COLUMNS]
        for row in zip(*cols):
            yield CommitRecord(*(v.item() if isinstance(v, np.generic) else v for v in row))

    @classmethod
    def from_records(cls, records):
        records = list(records)
        if not records:
            return cls(*(np.array([], dtype=np.int64) for _ in RECORD_COLUMNS))
        cols = list(zip(*((r.developer_id, r.month, r.repo_id, r.language_id, r.sector_id, r.n_commits) for r in records)))
        return cls(*(np.asarray(c) for c in cols))

    @classmethod
    def from_frame(cls, df):
        missing = [c for c in RECORD_COLUMNS if c not in df.columns]
        if missing:
            raise ValidationError(f"commit records missing columns: {missing}")
        return cls(*(df[c].to_numpy() for c in RECORD_COLUMNS))

    def to_frame(self):
        return pd.DataFrame({c: getattr(self, c) for c in RECORD_COLUMNS})

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, lineterminator="\n")

    @classmethod
    def read_csv(cls, path):
        return cls.from_frame(pd.read_csv(path))

    def select(self, mask):
        return CommitTable(*(getattr(self, c)[mask] for c in RECORD_COLUMNS))


def _as_table(records):
    if isinstance(records, CommitTable):
        return records
    if isinstance(records, pd.DataFrame):
        return CommitTable.from_frame(records)
    return CommitTable.from_records(records)


@dataclass
class Panel:
    """Balanced developer-by-month panel.

    ``outcomes`` maps a column name to an (n_developers, n_months) float
    array; ``first_treat`` is 0 for developers never treated in the data.
    ``covariates`` holds time-invariant per-developer columns.
    """

    developer_ids: np.ndarray
    months: np.ndarray
    first_treat: np.ndarray
    outcomes: dict
    covariates: dict = field(default_factory=dict)

    @property
    def n_developers(self):
        return len(self.developer_ids)

    @property
    def n_months(self):
        return len(self.months)

    def outcome(self, name):
        try:
            return self.outcomes[name]
        except KeyError:
            raise ValidationError(f"unknown outcome {name!r}; available: {sorted(self.outcomes)}") from None

    def copy(self):
        return Panel(
            self.developer_ids.copy(),
            self.months.copy(),
            self.first_treat.copy(),
            {k: v.copy() for k, v in self.outcomes.items()},
            {k: v.copy() for k, v in self.covariates.items()},
        )

    def select(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return Panel(
            self.developer_ids[mask],
            self.months.copy(),
            self.first_treat[mask],
            {k: v[mask] for k, v in self.outcomes.items()},
            {k: v[mask] for k, v in self.covariates.items()},
        )

    def post_mask(self):
        """(n, T) bool: treated developer-months at or after adoption."""
        g = self.first_treat[:, None]
        return (g > 0) & (self.months[None, :] >= g)

    def to_frame(self):
        n, T = self.n_developers, self.n_months
        data = {
            "developer_id": np.repeat(self.developer_ids, T),
            "month": np.tile(self.months, n),
            "first_treat": np.repeat(self.first_treat, T),
        }
        for name in list(OUTCOMES) + [k for k in self.outcomes if k not in OUTCOMES]:
            if name not in self.outcomes:
                continue
            vals = self.outcomes[name].reshape(-1)
            if name != "language_entropy" and np.all(vals == np.round(vals)):
                vals = vals.astype(np.int64)
            data[name] = vals
        for name, vals in self.covariates.items():
            data[name] = np.repeat(vals, T)
        return pd.DataFrame(data)

    def to_csv(self, path):
        self.to_frame().to_csv(path, index=False, float_format="%.12g", lineterminator="\n")

    @classmethod
    def from_frame(cls, df, covariates=()):
        for c in ("developer_id", "month", "first_treat"):
            if c not in df.columns:
                raise ValidationError(f"panel missing column {c!r}")
        df = df.sort_values(["developer_id", "month"], kind="stable")
        devs = pd.unique(df["developer_id"])
        months = np.sort(pd.unique(df["month"])).astype(np.int64)
        n, T = len(devs), len(months)
        if len(df) != n * T:
            raise ValidationError(f"panel is not balanced: {len(df)} rows for {n} developers x {T} months")
        if T > 1 and np.any(np.diff(months) != 1):
            raise ValidationError("panel months must be consecutive integers")
        ft = df.groupby("developer_id", sort=False)["first_treat"].first().to_numpy().astype(np.int64)
        skip = {"developer_id", "month", "first_treat", *covariates}
        outcomes = {
            c: df[c].to_numpy(dtype=float).reshape(n, T)
            for c in df.columns
            if c not in skip and pd.api.types.is_numeric_dtype(df[c])
        }
        cov = {c: df.groupby("developer_id", sort=False)[c].first().to_numpy(dtype=float) for c in covariates}
        return cls(np.asarray(devs), months, ft, outcomes, cov)

    @classmethod
    def read_csv(cls, path, covariates=()):
        return cls.from_frame(pd.read_csv(path), covariates=covariates)


def read_adoption_csv(path):
    df = pd.read_csv(path)
    missing = [c for c in ADOPTION_COLUMNS if c not in df.columns]
    if missing:
        raise ValidationError(f"adoption file missing columns: {missing}")
    return {k.item() if isinstance(k, np.generic) else k: int(v) for k, v in zip(df["developer_id"], df["first_treat"])}


def write_adoption_csv(adoption, path):
    df = pd.DataFrame({"developer_id": list(adoption), "first_treat": list(adoption.values())})
    df.to_csv(path, index=False, lineterminator="\n")


def _sorted_ids(ids):
    try:
        return sorted(ids)
    except TypeError:
        return sorted(ids, key=str)


def build_outcomes(records, adoption, window=None, backend=None):
    """Fold commit records into a balanced developer-month :class:`Panel`.

    Parameters
    ----------
    records : CommitTable, DataFrame or iterable of CommitRecord
    adoption : dict
        developer id -> first treated month (0 = never).  Every developer in
        ``records`` must appear; developers without records get zero rows.
    window : (first_month, last_month), optional
        Defaults to the range of months in ``records``.
    backend : {'cython', 'python'}, optional
        Kernel override; the default is the backend picked at import.

    Duplicate (developer, month, repo, language) cells are summed and counted
    in the ``duplicates_merged`` attribute of the returned panel.
    """
    table = _as_table(records)
    keep = np.asarray(table.n_commits, dtype=np.int64) > 0
    table = table.select(keep)
    if window is None:
        if len(table) == 0:
            raise ValidationError("window is required when there are no records")
        window = (int(np.min(table.month)), int(np.max(table.month)))
    lo, hi = int(window[0]), int(window[1])
    if hi < lo:
        raise ValidationError(f"empty window {window}")
    months = np.arange(lo, hi + 1, dtype=np.int64)
    month = np.asarray(table.month, dtype=np.int64)
    if len(month) and (month.min() < lo or month.max() > hi):
        raise ValidationError(f"record months outside window [{lo}, {hi}]")

    dev_ids = _sorted_ids(adoption)
    dev_index = {d: i for i, d in enumerate(dev_ids)}
    try:
        dev = np.fromiter((dev_index[d] for d in table.developer_id.tolist()), dtype=np.int64, count=len(table))
    except KeyError as exc:
        raise ValidationError(f"developer {exc.args[0]!r} has records but no adoption entry") from None

    repo = pd.factorize(table.repo_id, sort=True)[0].astype(np.int64)
    lang_codes, lang_uniques = pd.factorize(table.language_id, sort=True)
    lang = lang_codes.astype(np.int64)
    sector = pd.factorize(table.sector_id, sort=True)[0].astype(np.int64)
    commits = np.asarray(table.n_commits, dtype=np.int64)
    tidx = month - lo

    n_dup = 0
    if len(dev):
        frame = pd.DataFrame({"d": dev, "t": tidx, "r": repo, "l": lang, "s": sector, "c": commits})
        merged = frame.groupby(["d", "t", "r", "l"], sort=False, as_index=False).agg(s=("s", "first"), c=("c", "sum"))
        n_dup = len(frame) - len(merged)
        if n_dup:
            warnings.warn(f"merged {n_dup} duplicate (developer, month, repo, language) records", stacklevel=2)
        merged = merged.sort_values(["d", "t", "l", "r"], kind="stable")
        dev, tidx, repo, lang, sector, commits = (
            np.ascontiguousarray(merged[c].to_numpy(dtype=np.int64)) for c in ("d", "t", "r", "l", "s", "c")
        )

    kern = get_kernels(backend)
    out = kern.panel_outcomes(dev, tidx, repo, lang, sector, commits, len(dev_ids), len(months), max(len(lang_uniques), 1))
    outcomes = {name: np.ascontiguousarray(out[..., j]) for j, name in enumerate(_KERNEL_COLUMNS)}
    panel = Panel(
        np.asarray(dev_ids, dtype=object) if not all(isinstance(d, (int, np.integer)) for d in dev_ids) else np.asarray(dev_ids, dtype=np.int64),
        months,
        np.asarray([int(adoption[d]) for d in dev_ids], dtype=np.int64),
        outcomes,
    )
    panel.duplicates_merged = n_dup
    return panel


def drop_bots(records, adoption):
    """Remove records and adoption entries whose developer login is a bot."""
    table = _as_table(records)
    bots = {d for d in adoption if filter_bot_login(d)}
    if not bots:
        return table, dict(adoption)
    mask = np.array([d not in bots for d in table.developer_id.tolist()], dtype=bool)
    return table.select(mask), {d: g for d, g in adoption.items() if d not in bots}


@dataclass
class Summary:
    table: pd.DataFrame
    counts: dict

    def to_text(self):
        lines = [f"{'Variable':<28}{'Treated pre':>16}{'Treated post':>16}{'Control':>16}{'Post - Control':>16}"]
        for name, row in self.table.iterrows():
            lines.append(
                f"{name:<28}{row.treated_pre_mean:>16.2f}{row.treated_post_mean:>16.2f}"
                f"{row.control_mean:>16.2f}{row.diff_post_control:>16.2f}"
            )
            lines.append(
                f"{'':<28}{'(%.2f)' % row.treated_pre_sd:>16}{'(%.2f)' % row.treated_post_sd:>16}"
                f"{'(%.2f)' % row.control_sd:>16}"
            )
        c = self.counts
        lines.append(f"Developers: {c['treated_developers']} treated, {c['control_developers']} control")
        lines.append(f"Months: {c['months']}  Rows: {c['rows']}")
        return "\n".join(lines)


def summarize(panel):
    """Means and standard deviations by group, in the layout of a summary table.

    Treated developers adopt inside the window; everyone else is control and
    contributes all months.  Pre/post split at the adoption month.
    """
    if panel.n_developers == 0 or panel.n_months == 0:
        raise ValidationError("cannot summarize an empty panel")
    ft = panel.first_treat
    treated = (ft > 0) & (ft <= panel.months[-1])
    post = panel.post_mask() & treated[:, None]
    pre = (~post) & treated[:, None]
    control = np.broadcast_to(~treated[:, None], post.shape)

    def stats(x):
        if x.size == 0:
            return float("nan"), float("nan")
        return float(x.mean()), float(x.std(ddof=1)) if x.size > 1 else 0.0

    names = [n for n in OUTCOMES + OPTIONAL_OUTCOMES if n in panel.outcomes]
    rows = []
    for name in names:
        y = panel.outcomes[name]
        pm, ps = stats(y[pre])
        qm, qs = stats(y[post])
        cm, cs = stats(y[control])
        rows.append(
            dict(
                variable=name,
                treated_pre_mean=pm,
                treated_pre_sd=ps,
                treated_post_mean=qm,
                treated_post_sd=qs,
                control_mean=cm,
                control_sd=cs,
                diff_post_control=qm - cm,
            )
        )
    table = pd.DataFrame(rows).set_index("variable")
    counts = {
        "treated_developers": int(treated.sum()),
        "control_developers": int((~treated).sum()),
        "months": panel.n_months,
        "rows": panel.n_developers * panel.n_months,
        "treated_pre_rows": int(pre.sum()),
        "treated_post_rows": int(post.sum()),
        "control_rows": int(control.sum()),
    }
    return Summary(table, counts)


def pre_activity(panel):
    """Per developer: (number of pre-treatment months, number of those with commits).

    Pre-treatment months are months before adoption for developers treated
    inside the window and every month for everyone else.
    """
    ft = panel.first_treat
    treated = (ft > 0) & (ft <= panel.months[-1])
    pre = ~(panel.post_mask() & treated[:, None])
    active = panel.outcome("n_commits") > 0
    return pre.sum(axis=1), (pre & active).sum(axis=1)


def restrict_sample(panel, require_pre_activity=True, min_pre_active_frac=None, min_pre_active_months=None):
    """Keep developers meeting the pre-treatment activity filters."""
    n_pre, n_active = pre_activity(panel)
    keep = np.ones(panel.n_developers, dtype=bool)
    if require_pre_activity:
        keep &= n_active > 0
    if min_pre_active_frac is not None:
        with np.errstate(invalid="ignore", divide="ignore"):
            frac = np.where(n_pre > 0, n_active / np.maximum(n_pre, 1), 0.0)
        keep &= frac >= min_pre_active_frac
    if min_pre_active_months is not None:
        keep &= n_active >= min_pre_active_months
    return panel.select(keep)
