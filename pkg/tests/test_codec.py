import json

import pytest

from app.api.codec import (
    build_result,
    dump_result,
    input_digest,
    parse_problem,
    parse_result,
    require_certified,
    serialize_problem,
    verify_result,
)
from app.errors import CertificateError, EmptySetError, InputError
from app.services.gap import gap_report

BOX_1D = {
    "layout": {"nV": 1, "nE": 1},
    "A": {"type": "affine", "P": [[1.0]], "K": [[0.5]]},
    "B": {"type": "affine", "P": [[1.0]], "K": [[0.5]]},
    "C": {"type": "box", "lo": [-1.0], "hi": [1.0]},
    "D": {"type": "box", "lo": [-1.0], "hi": [1.0]},
    "h": [1.0],
}


def _doc(**changes):
    doc = json.loads(json.dumps(BOX_1D))
    doc.update(changes)
    return json.dumps(doc)


def test_name_falls_back_to_the_given_stem():
    assert parse_problem(_doc(), name="from_stem").name == "from_stem"
    assert parse_problem(_doc(name="inline"), name="from_stem").name == "inline"
    assert parse_problem(_doc()).name == "problem"


def test_syntax_errors_carry_a_location():
    with pytest.raises(InputError) as exc:
        parse_problem('{"layout": ')
    assert "syntax error at line 1" in str(exc.value)


def test_unknown_fields_are_rejected_with_their_path():
    with pytest.raises(InputError) as exc:
        parse_problem(_doc(bogus=1))
    assert exc.value.path == "bogus"

    with pytest.raises(InputError) as exc:
        parse_problem(_doc(layout={"nV": 1, "nE": 1, "oops": 2}))
    assert exc.value.path == "layout.oops"


def test_dimension_mismatch_names_the_field():
    with pytest.raises(InputError) as exc:
        parse_problem(_doc(h=[1.0, 2.0]))
    assert exc.value.path == "h"


def test_empty_set_is_reported_for_its_field():
    with pytest.raises(EmptySetError) as exc:
        parse_problem(_doc(C={"type": "box", "lo": [1.0], "hi": [0.0]}))
    assert exc.value.path == "C"


def test_kind_tag_is_checked_against_the_components():
    with pytest.raises(InputError) as exc:
        parse_problem(_doc(kind="v"))
    assert exc.value.path == "kind"


def test_unknown_set_type():
    with pytest.raises(InputError) as exc:
        parse_problem(_doc(D={"type": "circle"}))
    assert exc.value.path.startswith("D")


def test_serialization_is_stable(suite):
    for name in ("coupled_box_1d", "polytope_2d", "hemi_kink_1d", "coupled_vi_2d"):
        text = serialize_problem(suite(name))
        assert serialize_problem(parse_problem(text)) == text


def test_input_digest():
    assert input_digest(b"abc") == "sha256:ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad"
    assert input_digest("abc") == input_digest(b"abc")


def _certified_result(prob, digest="sha256:x"):
    report = gap_report(prob, [1.0], [-0.5], minty=False)
    return build_result(prob, [1.0], [-0.5], report, digest, "certified")


def test_result_file_verifies(suite):
    prob = suite("coupled_box_1d")
    result = parse_result(dump_result(_certified_result(prob)))
    verification = verify_result(prob, result, digest="sha256:x")
    assert verification.ok
    assert verification.digest_matches is True
    assert verification.drift <= 1e-12
    require_certified(verification)


def test_tampered_result_fails(suite):
    prob = suite("coupled_box_1d")
    result = _certified_result(prob)
    result.u = [0.9]
    verification = verify_result(prob, result, digest="sha256:other")
    assert not verification.ok
    assert verification.digest_matches is False
    with pytest.raises(CertificateError):
        require_certified(verification)


def test_result_for_another_problem_shape(suite):
    result = _certified_result(suite("coupled_box_1d"))
    with pytest.raises(InputError) as exc:
        verify_result(suite("coupled_vi_2d"), result)
    assert exc.value.path == "u"


def test_infinite_gaps_survive_the_file(suite):
    result = _certified_result(suite("coupled_box_1d"))
    result.gaps.gap1 = float("inf")
    text = dump_result(result)
    assert "Infinity" in text
    assert parse_result(text).gaps.gap1 == float("inf")
