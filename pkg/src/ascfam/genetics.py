"""Genotype laws: Hardy-Weinberg founders, Mendelian transmission, joint
family genotype distributions, allele-frequency estimation, and the
multivariate-normal polygenic score model.

Family genotype distributions are built by enumeration: unobserved parents
of a sibship are summed over the nine Hardy-Weinberg weighted parental
genotype pairs, while parents present in the family contribute their own
Hardy-Weinberg factor and condition the transmission directly.
"""

from __future__ import annotations

import itertools
from dataclasses import dataclass

import numpy as np

from ascfam.mvnorm import Gaussian
from ascfam.pedigree import MAX_ENUM_MEMBERS, Cohort, Family


class GeneticsError(ValueError):
    """Raised on unusable genetic input (bad q, unsupported topology, ...)."""


def hwe_probs(q: float) -> tuple[float, float, float]:
    """Hardy-Weinberg genotype proportions ((1-q)^2, 2q(1-q), q^2)."""
    if not 0.0 < q < 1.0:
        raise GeneticsError(f"minor allele frequency must be in (0,1), got {q}")
    p = 1.0 - q
    return (p * p, 2.0 * q * p, q * q)


def _transmission_table() -> np.ndarray:
    """T[c, m, f] = P(child genotype c | mother m, father f) under Mendel."""
    t = np.zeros((3, 3, 3))
    for m in range(3):
        for f in range(3):
            pm, pf = m / 2.0, f / 2.0
            t[0, m, f] = (1.0 - pm) * (1.0 - pf)
            t[1, m, f] = pm * (1.0 - pf) + (1.0 - pm) * pf
            t[2, m, f] = pm * pf
    return t


TRANSMISSION = _transmission_table()


def transmission_prob(child: int, mother: int, father: int) -> float:
    """Mendelian probability of the child's minor-allele count given parents."""
    for name, g in (("child", child), ("mother", mother), ("father", father)):
        if g not in (0, 1, 2):
            raise GeneticsError(f"{name} genotype must be in {{0,1,2}}, got {g}")
    return float(TRANSMISSION[child, mother, father])


@dataclass(frozen=True)
class GenotypeDist:
    """Joint distribution over genotype configurations of a family's members."""

    member_ids: tuple[str, ...]
    configs: np.ndarray  # (K, m) int8, rows are genotype vectors
    probs: np.ndarray  # (K,)

    @property
    def n_members(self) -> int:
        return len(self.member_ids)

    def log_prob_of(self, config) -> float:
        config = np.asarray(config, dtype=np.int8)
        match = np.all(self.configs == config[None, :], axis=1)
        idx = np.flatnonzero(match)
        if idx.size != 1:
            raise GeneticsError(f"configuration {config.tolist()} not in distribution")
        return float(np.log(self.probs[idx[0]]))

    def marginal(self, keep: list[int]) -> "GenotypeDist":
        """Marginal distribution over a subset of members (sum the rest out)."""
        sub = self.configs[:, keep]
        key = sub @ (3 ** np.arange(len(keep), dtype=np.int64))
        order = np.argsort(key, kind="stable")
        key_s, sub_s, pr_s = key[order], sub[order], self.probs[order]
        boundaries = np.flatnonzero(np.diff(key_s)) + 1
        groups = np.split(np.arange(key_s.size), boundaries)
        configs = np.array([sub_s[g[0]] for g in groups], dtype=np.int8)
        probs = np.array([pr_s[g].sum() for g in groups])
        ids = tuple(self.member_ids[i] for i in keep)
        return GenotypeDist(member_ids=ids, configs=configs, probs=probs)


@dataclass(frozen=True)
class ScoreModel:
    """Mean and standard deviation of a continuous polygenic score."""

    mu_g: float
    sigma_g: float

    def __post_init__(self):
        if not self.sigma_g > 0:
            raise GeneticsError(f"score standard deviation must be > 0, got {self.sigma_g}")


def family_genotype_dist(family: Family, q: float) -> GenotypeDist:
    """Joint genotype distribution of all family members under random mating.

    Siblings with out-of-family (unobserved) parents are handled by summing
    the product of transmission probabilities over the nine parental genotype
    pairs weighted by Hardy-Weinberg; in-family parents and unrelated
    founders get Hardy-Weinberg marginals of their own.

    Raises :class:`GeneticsError` for unsupported topologies (shared
    unobserved parents across distinct sibships, grandparent chains) or
    families above the enumeration cap.
    """
    hwe = np.array(hwe_probs(q))
    members = family.members
    m = len(members)
    if m > MAX_ENUM_MEMBERS:
        raise GeneticsError(
            f"family {family.id!r} has {m} members; genotype enumeration caps at "
            f"{MAX_ENUM_MEMBERS} (3**{MAX_ENUM_MEMBERS} configurations)"
        )
    index = family.member_index()

    founders = []
    groups: dict[tuple[str, str], list[int]] = {}
    for j, mem in enumerate(members):
        if mem.is_founder:
            founders.append(j)
        elif mem.father_id is None or mem.mother_id is None:
            raise GeneticsError(
                f"family {family.id!r}, member {mem.id!r}: single-parent records "
                "are not supported"
            )
        else:
            groups.setdefault((mem.father_id, mem.mother_id), []).append(j)

    # Supported topology: children's in-family parents must be founders, and
    # unobserved parents may not be shared between sibling groups.
    external_parents: list[str] = []
    for (father, mother), children in groups.items():
        for pid in (father, mother):
            if pid in index:
                if not members[index[pid]].is_founder:
                    raise GeneticsError(
                        f"family {family.id!r}: parent {pid!r} is itself a "
                        "non-founder (multi-generation chains unsupported)"
                    )
            else:
                external_parents.append(pid)
    if len(set(external_parents)) != len(external_parents):
        raise GeneticsError(
            f"family {family.id!r}: sibships sharing an unobserved parent are "
            "unsupported"
        )

    configs = np.array(list(itertools.product((0, 1, 2), repeat=m)), dtype=np.int8)
    probs = np.ones(configs.shape[0])

    for j in founders:
        probs *= hwe[configs[:, j]]

    for (father, mother), children in groups.items():
        f_in = father in index
        m_in = mother in index
        if f_in and m_in:
            fi, mi = index[father], index[mother]
            for j in children:
                probs *= TRANSMISSION[configs[:, j], configs[:, mi], configs[:, fi]]
        elif not f_in and not m_in:
            # Sum the unobserved parental pair out of the children's joint law.
            k = len(children)
            joint = np.zeros((3,) * k)
            for gm in range(3):
                for gp in range(3):
                    block = np.array(hwe[gm] * hwe[gp])
                    for _ in range(k):
                        block = np.multiply.outer(block, TRANSMISSION[:, gm, gp])
                    joint += block
            probs *= joint[tuple(configs[:, j] for j in children)]
        else:
            raise GeneticsError(
                f"family {family.id!r}: sibship with one in-family and one "
                "unobserved parent is unsupported"
            )

    return GenotypeDist(
        member_ids=tuple(mem.id for mem in members), configs=configs, probs=probs
    )


def _control_genotypes(cohort: Cohort) -> list[float]:
    values = []
    for family in cohort.families:
        for mem in family.members:
            if mem.primary == 0 and mem.genotype is not None:
                values.append(mem.genotype)
    return values


def estimate_maf_controls(cohort: Cohort) -> float:
    """Allele-counting MAF estimate from controls (Y = 0) with genotypes.

    Returns q_hat = (n1 + 2 n2) / (2 (n0 + n1 + n2)). A return of exactly 0
    or 1 is degenerate: downstream fitting requires q in (0, 1).
    """
    genos = _control_genotypes(cohort)
    if not genos:
        raise GeneticsError("no genotyped controls to estimate the allele frequency from")
    counts = np.zeros(3)
    for g in genos:
        gi = int(g)
        if gi not in (0, 1, 2) or gi != g:
            raise GeneticsError(f"control genotype {g!r} is not a valid allele count")
        counts[gi] += 1
    return float((counts[1] + 2.0 * counts[2]) / (2.0 * counts.sum()))


def estimate_score_moments(cohort: Cohort) -> ScoreModel:
    """Sample mean and SD (divisor n-1) of polygenic scores among controls."""
    scores = np.array(_control_genotypes(cohort))
    if scores.size < 2:
        raise GeneticsError("need at least two controls with scores")
    sd = float(scores.std(ddof=1))
    if sd <= 0:
        raise GeneticsError("control scores are constant; score SD must be positive")
    return ScoreModel(mu_g=float(scores.mean()), sigma_g=sd)


def score_distribution(family: Family, model: ScoreModel) -> Gaussian:
    """Polygenic score law for the family: N(mu_g * 1, sigma_g^2 * R)."""
    if family.relationship is None:
        raise GeneticsError(f"family {family.id!r} has no relationship matrix")
    n = family.size
    return Gaussian(
        mean=np.full(n, model.mu_g),
        cov=model.sigma_g ** 2 * family.relationship,
    )
