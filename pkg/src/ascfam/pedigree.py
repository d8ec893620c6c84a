"""Family structures: parsing, validation, and relationship matrices.

Families are sibships plus unrelated founders (partners married into the
family). Parents referenced but not present as rows are kept as implicit,
unobserved founders; they carry no phenotype and are summed over by the
genetic machinery. Relationship coefficients are 2**(-degree) where the
degree counts each independent ancestral path (full siblings 0.5,
parent-offspring 0.5, genetically unrelated pairs 0).
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace
from typing import Iterable, Optional, Sequence

import numpy as np

# Hard cap on members entering genotype-configuration enumeration (3**8 states).
MAX_ENUM_MEMBERS = 8

CSV_FIXED_COLUMNS = [
    "family_id",
    "individual_id",
    "father_id",
    "mother_id",
    "sex",
    "primary",
    "secondary",
    "genotype",
]

VALID_SEX = {"M", "F", "U"}


class PedigreeError(ValueError):
    """Raised on structurally invalid pedigree input."""


@dataclass(frozen=True)
class Individual:
    """One family member with optional phenotypes and genotype.

    ``genotype`` holds a minor-allele count in {0, 1, 2} in SNP mode or an
    arbitrary real score in score mode; ``None`` means unobserved.
    """

    id: str
    father_id: Optional[str] = None
    mother_id: Optional[str] = None
    sex: str = "U"
    primary: Optional[int] = None
    secondary: Optional[float] = None
    genotype: Optional[float] = None
    covariates: tuple[float, ...] = ()

    @property
    def is_founder(self) -> bool:
        return self.father_id is None and self.mother_id is None


@dataclass
class Family:
    """A family: ordered members plus their coefficient-of-relationship matrix."""

    id: str
    members: tuple[Individual, ...]
    relationship: Optional[np.ndarray] = None

    @property
    def size(self) -> int:
        return len(self.members)

    def member_index(self) -> dict[str, int]:
        return {m.id: i for i, m in enumerate(self.members)}

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Family):
            return NotImplemented
        if self.id != other.id or self.members != other.members:
            return False
        a, b = self.relationship, other.relationship
        if a is None or b is None:
            return a is b
        return np.array_equal(a, b)


@dataclass
class Cohort:
    families: list[Family]
    covariate_names: list[str] = field(default_factory=list)
    genetic_mode: str = "snp"

    @property
    def n_families(self) -> int:
        return len(self.families)

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Cohort):
            return NotImplemented
        return (
            self.families == other.families
            and self.covariate_names == other.covariate_names
            and self.genetic_mode == other.genetic_mode
        )


@dataclass(frozen=True)
class Diagnostic:
    """One validation finding: which member broke which rule."""

    family_id: str
    member_id: Optional[str]
    rule: str
    severity: str  # "error", "warning" or "info"
    message: str


def _parse_optional_float(raw: str, what: str, where: str) -> Optional[float]:
    if raw == "":
        return None
    try:
        return float(raw)
    except ValueError:
        raise PedigreeError(f"{where}: malformed {what} {raw!r}") from None


def _parse_row(
    row: dict[str, str], covariate_names: Sequence[str], genetic_mode: str
) -> tuple[str, Individual]:
    fam = row.get("family_id", "").strip()
    iid = row.get("individual_id", "").strip()
    where = f"family {fam!r}, individual {iid!r}"
    if not fam or not iid:
        raise PedigreeError(f"{where}: family_id and individual_id are required")

    father = row.get("father_id", "").strip() or None
    mother = row.get("mother_id", "").strip() or None

    sex = (row.get("sex", "").strip() or "U").upper()
    if sex not in VALID_SEX:
        raise PedigreeError(f"{where}: malformed sex {sex!r} (expected M/F/U)")

    raw_primary = row.get("primary", "").strip()
    if raw_primary == "":
        primary: Optional[int] = None
    elif raw_primary in ("0", "1"):
        primary = int(raw_primary)
    else:
        raise PedigreeError(f"{where}: malformed primary {raw_primary!r} (expected 0/1)")

    secondary = _parse_optional_float(row.get("secondary", "").strip(), "secondary", where)

    raw_geno = row.get("genotype", "").strip()
    if raw_geno == "":
        genotype: Optional[float] = None
    else:
        genotype = _parse_optional_float(raw_geno, "genotype", where)
        if genetic_mode == "snp" and genotype not in (0.0, 1.0, 2.0):
            raise PedigreeError(
                f"{where}: genotype {raw_geno!r} not in {{0,1,2}} (SNP mode)"
            )

    covs = []
    for name in covariate_names:
        val = _parse_optional_float(row.get(name, "").strip(), f"covariate {name!r}", where)
        if val is None:
            raise PedigreeError(f"{where}: missing covariate {name!r}")
        covs.append(val)

    ind = Individual(
        id=iid,
        father_id=father,
        mother_id=mother,
        sex=sex,
        primary=primary,
        secondary=secondary,
        genotype=genotype,
        covariates=tuple(covs),
    )
    return fam, ind


def parse_pedigree(
    records: Iterable[dict[str, str]],
    covariate_names: Optional[Sequence[str]] = None,
    genetic_mode: str = "snp",
) -> Cohort:
    """Build a Cohort from tabular rows following the pedigree CSV schema.

    ``records`` is an iterable of header-keyed string mappings (e.g. rows of
    ``csv.DictReader``). Columns beyond the fixed schema are treated as
    covariates unless ``covariate_names`` narrows them explicitly.

    Raises :class:`PedigreeError` on duplicate (family, id) pairs,
    self-ancestry cycles, or malformed fields.
    """
    if genetic_mode not in ("snp", "score"):
        raise PedigreeError(f"unknown genetic_mode {genetic_mode!r}")

    records = iter(records)
    rows = list(records)
    if covariate_names is None:
        if rows:
            extra = [k for k in rows[0].keys() if k not in CSV_FIXED_COLUMNS]
            covariate_names = extra
        else:
            covariate_names = []
    covariate_names = list(covariate_names)

    by_family: dict[str, list[Individual]] = {}
    seen: set[tuple[str, str]] = set()
    for row in rows:
        fam, ind = _parse_row(row, covariate_names, genetic_mode)
        key = (fam, ind.id)
        if key in seen:
            raise PedigreeError(f"duplicate (family,id) pair {key!r}")
        seen.add(key)
        by_family.setdefault(fam, []).append(ind)

    families = []
    for fam_id, members in by_family.items():
        family = Family(id=fam_id, members=tuple(members))
        _check_cycles(family)
        family.relationship = relationship_matrix(family)
        families.append(family)

    return Cohort(families=families, covariate_names=covariate_names, genetic_mode=genetic_mode)


def load_pedigree(path, genetic_mode: str = "snp") -> Cohort:
    """Read a pedigree CSV file (header required) into a Cohort."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if reader.fieldnames is None:
            raise PedigreeError(f"{path}: empty file (header required)")
        missing = [c for c in CSV_FIXED_COLUMNS if c not in reader.fieldnames]
        if missing:
            raise PedigreeError(f"{path}: missing required columns {missing}")
        covariates = [c for c in reader.fieldnames if c not in CSV_FIXED_COLUMNS]
        return parse_pedigree(reader, covariate_names=covariates, genetic_mode=genetic_mode)


def _format_optional(value, as_int: bool = False) -> str:
    if value is None:
        return ""
    if as_int:
        return str(int(value))
    return repr(float(value))


def write_pedigree(cohort: Cohort, path_or_buf) -> None:
    """Serialize a Cohort back to the pedigree CSV schema.

    Numbers are written with full precision so parse -> write -> parse
    round-trips exactly.
    """
    own = isinstance(path_or_buf, (str, bytes)) or hasattr(path_or_buf, "__fspath__")
    fh = open(path_or_buf, "w", newline="") if own else path_or_buf
    try:
        writer = csv.writer(fh)
        writer.writerow(CSV_FIXED_COLUMNS + list(cohort.covariate_names))
        snp = cohort.genetic_mode == "snp"
        for family in cohort.families:
            for m in family.members:
                writer.writerow(
                    [
                        family.id,
                        m.id,
                        m.father_id or "",
                        m.mother_id or "",
                        m.sex,
                        "" if m.primary is None else str(m.primary),
                        _format_optional(m.secondary),
                        _format_optional(m.genotype, as_int=snp),
                    ]
                    + [repr(c) for c in m.covariates]
                )
    finally:
        if own:
            fh.close()


def write_pedigree_string(cohort: Cohort) -> str:
    buf = io.StringIO()
    write_pedigree(cohort, buf)
    return buf.getvalue()


def _check_cycles(family: Family) -> None:
    """Reject pedigrees where an individual is its own ancestor."""
    index = family.member_index()
    state: dict[str, int] = {}  # 0 visiting, 1 done

    def visit(mid: str, trail: tuple[str, ...]) -> None:
        if mid in trail:
            raise PedigreeError(
                f"family {family.id!r}: self-ancestry cycle through {mid!r}"
            )
        if state.get(mid) == 1:
            return
        member = family.members[index[mid]] if mid in index else None
        if member is not None:
            for pid in (member.father_id, member.mother_id):
                if pid is not None:
                    visit(pid, trail + (mid,))
        state[mid] = 1

    for m in family.members:
        visit(m.id, ())


def _kinship_table(family: Family) -> dict[tuple[str, str], float]:
    """Kinship coefficients over members plus implicit unobserved parents.

    Founders (including out-of-family parent tokens) are assumed unrelated
    and non-inbred, so the coefficient of relationship is 2 * kinship.
    """
    parents: dict[str, tuple[Optional[str], Optional[str]]] = {}
    for m in family.members:
        parents[m.id] = (m.father_id, m.mother_id)
    # Implicit parents referenced but absent as rows are founders.
    for f_id, m_id in list(parents.values()):
        for pid in (f_id, m_id):
            if pid is not None and pid not in parents:
                parents[pid] = (None, None)

    depth: dict[str, int] = {}

    def get_depth(i: str) -> int:
        if i in depth:
            return depth[i]
        f, m = parents[i]
        d = 0 if f is None else 1 + max(get_depth(f), get_depth(m))
        depth[i] = d
        return d

    memo: dict[tuple[str, str], float] = {}

    def phi(a: str, b: str) -> float:
        if a == b:
            return 0.5
        key = (a, b) if a <= b else (b, a)
        if key in memo:
            return memo[key]
        # Recurse on the individual farther from the founders.
        if get_depth(a) < get_depth(b):
            a, b = b, a
        fa, ma = parents[a]
        if fa is None:
            val = 0.0  # two distinct founders: unrelated
        else:
            val = 0.5 * (phi(fa, b) + phi(ma, b))
        memo[key] = val
        return val

    table: dict[tuple[str, str], float] = {}
    ids = [m.id for m in family.members]
    for i, a in enumerate(ids):
        for b in ids[i:]:
            key = (a, b) if a <= b else (b, a)
            table[key] = phi(a, b)
    return table


def relationship_matrix(family: Family) -> np.ndarray:
    """Coefficient-of-relationship matrix for the family's members.

    Entry (l, m) is 2**(-degree(l, m)); the diagonal is exactly 1 and
    pairs with no pedigree path (partners, married-in members) get 0.
    """
    ids = [m.id for m in family.members]
    table = _kinship_table(family)
    n = len(ids)
    out = np.eye(n)
    for i in range(n):
        for j in range(i + 1, n):
            a, b = ids[i], ids[j]
            key = (a, b) if a <= b else (b, a)
            out[i, j] = out[j, i] = 2.0 * table[key]
    return out


def sibship(
    family_id: str,
    n: int,
    father_id: str = "father",
    mother_id: str = "mother",
) -> Family:
    """Construct a pure sibship of size ``n`` with implicit unobserved parents."""
    members = tuple(
        Individual(id=f"{family_id}_{j + 1}", father_id=father_id, mother_id=mother_id)
        for j in range(n)
    )
    fam = Family(id=family_id, members=members)
    fam.relationship = 0.5 * np.eye(n) + 0.5 * np.ones((n, n))
    return fam


def with_data(
    family: Family,
    y: Optional[Sequence[Optional[int]]] = None,
    x: Optional[Sequence[Optional[float]]] = None,
    g: Optional[Sequence[Optional[float]]] = None,
    z: Optional[Sequence[Sequence[float]]] = None,
) -> Family:
    """Copy a family, attaching phenotype/genotype/covariate values per member."""
    members = []
    for j, m in enumerate(family.members):
        members.append(
            replace(
                m,
                primary=None if y is None or y[j] is None else int(y[j]),
                secondary=None if x is None or x[j] is None else float(x[j]),
                genotype=None if g is None or g[j] is None else float(g[j]),
                covariates=tuple(z[j]) if z is not None else m.covariates,
            )
        )
    return Family(id=family.id, members=tuple(members), relationship=family.relationship)


def validate(family: Family) -> list[Diagnostic]:
    """Check structural and data invariants; returns one diagnostic per violation.

    An empty list means every invariant holds. Severities: "error" for
    violations that make the family unusable, "warning"/"info" for
    recoverable conditions (e.g. partial phenotype data).
    """
    diags: list[Diagnostic] = []
    ids = [m.id for m in family.members]
    index = family.member_index()

    if len(set(ids)) != len(ids):
        diags.append(
            Diagnostic(family.id, None, "duplicate-id", "error", "duplicate member ids")
        )

    for m in family.members:
        if (m.father_id is None) != (m.mother_id is None):
            diags.append(
                Diagnostic(
                    family.id,
                    m.id,
                    "parent-pair",
                    "error",
                    "father_id and mother_id must be both absent or both present",
                )
            )
        if m.father_id == m.id or m.mother_id == m.id:
            diags.append(
                Diagnostic(family.id, m.id, "self-ancestry", "error", "member is its own parent")
            )
        if m.father_id is not None and m.father_id in index:
            if family.members[index[m.father_id]].sex == "F":
                diags.append(
                    Diagnostic(
                        family.id, m.id, "parent-sex", "warning",
                        f"father {m.father_id!r} is recorded as female",
                    )
                )
        if m.mother_id is not None and m.mother_id in index:
            if family.members[index[m.mother_id]].sex == "M":
                diags.append(
                    Diagnostic(
                        family.id, m.id, "parent-sex", "warning",
                        f"mother {m.mother_id!r} is recorded as male",
                    )
                )
        observed = [m.primary is not None, m.secondary is not None, m.genotype is not None]
        if any(observed) and not all(observed):
            diags.append(
                Diagnostic(
                    family.id, m.id, "partial-data", "info",
                    "member has a partially observed phenotype/genotype record",
                )
            )

    try:
        _check_cycles(family)
    except PedigreeError as exc:
        diags.append(Diagnostic(family.id, None, "self-ancestry", "error", str(exc)))

    if family.size > MAX_ENUM_MEMBERS:
        diags.append(
            Diagnostic(
                family.id, None, "size-cap", "error",
                f"family has {family.size} members; genotype enumeration caps at "
                f"{MAX_ENUM_MEMBERS}",
            )
        )

    if family.relationship is not None:
        r = family.relationship
        if r.shape != (family.size, family.size):
            diags.append(
                Diagnostic(family.id, None, "relationship-shape", "error",
                           "relationship matrix does not match family size")
            )
        else:
            if not np.allclose(r, r.T):
                diags.append(
                    Diagnostic(family.id, None, "relationship-symmetry", "error",
                               "relationship matrix is not symmetric")
                )
            if not np.all(np.diag(r) == 1.0):
                diags.append(
                    Diagnostic(family.id, None, "relationship-diagonal", "error",
                               "relationship diagonal must be exactly 1")
                )
            if np.any(r < 0) or np.any(r > 1):
                diags.append(
                    Diagnostic(family.id, None, "relationship-range", "error",
                               "relationship entries must lie in [0, 1]")
                )

    return diags
