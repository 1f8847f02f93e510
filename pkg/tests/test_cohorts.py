import numpy as np
import pytest

from psfheval.cohorts import (
    compare_groups,
    derive_aop_stratum,
    mann_whitney_u,
    stratify,
)
from psfheval.ingest import CaseMeta, StructureSelector
from psfheval.metrics import MetricRecord


def _record(case_id, institution="SMU", scanner="EsaoteMyLab", stratum="Below120",
            team="t", structure=StructureSelector.PSFH, dsc=0.5):
    meta = CaseMeta(case_id=case_id, split="Test2", institution=institution,
                    scanner=scanner, aop_stratum=stratum)
    return MetricRecord(case_id=case_id, team=team, structure=structure,
                        dsc=dsc, hd=1.0, asd=0.5, meta=meta)


def test_stratify_single_stratum():
    records = [_record(f"c{i}") for i in range(5)]
    strata = stratify(records, "scanner")
    assert len(strata) == 1
    assert strata[0].value == "EsaoteMyLab"
    assert len(strata[0].records) == 5


def test_stratify_test2_counts_match_cohort_sizes():
    # final test split: 487 scanner-A cases from one site, 213 from the other;
    # AoP strata 366+212 below the 120-degree threshold vs 121+1 at or above
    records = []
    i = 0
    for institution, scanner, n_below, n_atleast in (
        ("SMU", "EsaoteMyLab", 366, 121),
        ("JNU", "ObEye", 212, 1),
    ):
        for _ in range(n_below):
            records.append(_record(f"c{i}", institution, scanner, "Below120"))
            i += 1
        for _ in range(n_atleast):
            records.append(_record(f"c{i}", institution, scanner, "AtLeast120"))
            i += 1
    assert len(records) == 700

    by_institution = {s.value: len(s.records) for s in stratify(records, "institution")}
    assert by_institution == {"SMU": 487, "JNU": 213}
    by_stratum = {s.value: len(s.records) for s in stratify(records, "aop_stratum")}
    assert by_stratum == {"Below120": 578, "AtLeast120": 122}
    assert sum(by_institution.values()) == sum(by_stratum.values()) == len(records)


def test_stratify_unknown_goes_to_own_stratum():
    records = [_record("a", stratum=None), _record("b", stratum="Below120")]
    strata = {s.value: len(s.records) for s in stratify(records, "aop_stratum")}
    assert strata == {"Below120": 1, "unknown": 1}


def test_stratify_custom_tag_via_extra():
    meta = CaseMeta(case_id="a", split="Test2", institution="SMU",
                    scanner="EsaoteMyLab", extra={"machine_room": "west"})
    rec = MetricRecord(case_id="a", team="t", structure=StructureSelector.PS,
                       dsc=0.1, hd=1.0, asd=1.0, meta=meta)
    strata = stratify([rec, _record("b")], "machine_room")
    assert {s.value for s in strata} == {"west", "unknown"}


def test_derive_aop_stratum_threshold():
    assert derive_aop_stratum(119.999) == "Below120"
    assert derive_aop_stratum(120.0) == "AtLeast120"


def test_mwu_separated_samples():
    result = mann_whitney_u([1.0, 2.0, 3.0], [4.0, 5.0, 6.0])
    assert result.u == 0.0
    assert result.exact
    assert result.p_one_sided == 0.05  # 1 / C(6,3)
    assert result.p_two_sided == 0.1


def test_mwu_identical_multisets():
    result = mann_whitney_u([1.0, 2.0, 3.0], [1.0, 2.0, 3.0])
    assert result.exact
    assert result.p_two_sided == 1.0


def test_mwu_complement_identity():
    rng = np.random.default_rng(2)
    for _ in range(30):
        a = rng.integers(0, 6, size=int(rng.integers(1, 8))).astype(float)
        b = rng.integers(0, 6, size=int(rng.integers(1, 8))).astype(float)
        u_ab = mann_whitney_u(a, b).u
        u_ba = mann_whitney_u(b, a).u
        assert u_ab + u_ba == pytest.approx(len(a) * len(b))


def test_mwu_empty_sample_rejected():
    with pytest.raises(ValueError):
        mann_whitney_u([], [1.0])


def test_mwu_exact_and_normal_agree_on_tie_free_samples():
    rng = np.random.default_rng(7)
    for _ in range(10):
        a = rng.normal(0.0, 1.0, 10)
        b = rng.normal(0.5, 1.0, 10)
        exact = mann_whitney_u(a, b, exact_threshold=20)
        approx = mann_whitney_u(a, b, exact_threshold=0)
        assert exact.exact and not approx.exact
        assert approx.p_one_sided == pytest.approx(exact.p_one_sided, abs=0.01)


def _group_records(values_by_team):
    records = []
    for team, values in values_by_team.items():
        for i, v in enumerate(values):
            records.append(_record(f"c{i}", team=team, dsc=v))
    return records


def test_compare_groups_identical():
    vals = [0.5, 0.6, 0.7, 0.8]
    records = _group_records({"a1": vals, "a2": vals, "b1": vals, "b2": vals})
    grouping = {"a1": "G1", "a2": "G1", "b1": "G2", "b2": "G2"}
    cmpres = compare_groups(records, grouping, "DSC_PSFH")
    assert cmpres.groups == ("G1", "G2")
    (ga, gb, res, holm_p) = cmpres.pairwise[0]
    assert res.p_two_sided == 1.0
    assert holm_p == 1.0
    assert np.array_equal(cmpres.values["G1"], cmpres.values["G2"])


def test_compare_groups_shifted_distribution_significant():
    rng = np.random.default_rng(3)
    base = rng.uniform(0.4, 0.6, size=40)
    records = _group_records({
        "cnn1": base.tolist(),
        "cnn2": (base - 0.02).tolist(),
        "vit": (base + 0.3).tolist(),
    })
    grouping = {"cnn1": "conv", "cnn2": "conv", "vit": "transformer"}
    cmpres = compare_groups(records, grouping, "DSC_PSFH")
    (_, _, res, holm_p) = cmpres.pairwise[0]
    assert holm_p < 0.05


def test_compare_groups_single_record_group():
    records = _group_records({"solo": [0.7], "duo": [0.5, 0.6]})
    grouping = {"solo": "one", "duo": "two"}
    cmpres = compare_groups(records, grouping, "DSC_PSFH")
    assert cmpres.values["one"].size == 1
    assert len(cmpres.pairwise) == 1


def test_compare_groups_needs_two():
    records = _group_records({"only": [0.5, 0.6]})
    with pytest.raises(ValueError):
        compare_groups(records, {"only": "G"}, "DSC_PSFH")
