import itertools
import json
import logging
import re
from importlib import resources

import httpx
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sgforge.errors import ConfigError
from sgforge.graph_builder import GraphConfig, build_graph_from_nodes
from sgforge.langgen import (
    ClusterKind,
    HttpRephraseClient,
    LangConfig,
    RephraseRequest,
    SceneSample,
    StubRephraseClient,
    build_prompt,
    build_scene_prompt,
    classify_star,
    gen_multi,
    gen_pairwise,
    gen_star,
    load_pool,
    rephrase,
    scene_language,
)
from sgforge.langgen.prompts import PROMPT_FILES, prompt_text
from sgforge.langgen.records import star_family, star_records
from sgforge.langgen.rephrase import FLAG_FAILED, FLAG_REJECTED, FLAG_TRIMMED, rephrase_many
from sgforge.langgen.templates import slots_of
from sgforge.scene_model import AABB, MultiRelation, ObjectNode, RelationType

R = RelationType
POOL = load_pool()
POOL_FILE = resources.files("sgforge.langgen") / "data/templates.json"
L, A, B = R.NEAR_LEFT_OF, R.ABOVE, R.BEHIND


# -- templates ---------------------------------------------------------------


def test_next_to_template_zero():
    # seed 2 draws template 0
    assert gen_pairwise(("chair", R.NEXT_TO, "armchair"), POOL, 2) == "The chair is next to the armchair."
    assert gen_pairwise(("chair", R.NEXT_TO, "armchair"), POOL, 0, template_index=0) == "The chair is next to the armchair."


def test_inversion_template():
    assert gen_pairwise(("chair", R.NEXT_TO, "armchair"), POOL, 0, template_index=3) == "Next to the armchair is the chair."


def test_far_right_phrase():
    text = gen_pairwise(("suitcase", R.FAR_RIGHT_OF, "shoes"), POOL, 11)
    assert "far to the right of" in text


def test_article_fixed_before_vowel():
    assert gen_pairwise(("armchair", R.NEXT_TO, "desk"), POOL, 0, template_index=1) == "It is an armchair that is next to the desk."


def test_same_label_anchor_marked_other():
    assert gen_pairwise(("chair", R.NEAR_LEFT_OF, "chair"), POOL, 0, template_index=0).endswith("the other chair.")


def test_between_worked_example():
    rel = MultiRelation(R.BETWEEN, (1, 2), target=0)
    text = gen_multi(rel, {0: "fridge", 1: "cabinet", 2: "sofa"}, POOL, 0, template_index=0)
    assert text == "The fridge is between cabinet and sofa."


def test_between_identical_anchor_labels():
    rel = MultiRelation(R.BETWEEN, (1, 2), target=0)
    text = gen_multi(rel, {0: "bed", 1: "lamp", 2: "lamp"}, POOL, 0, template_index=0)
    assert text == "The bed is between one lamp and the other lamp."


def test_aligned_names_all_members():
    rel = MultiRelation(R.ALIGNED, (1, 2, 3), axis="Y")
    text = gen_multi(rel, {1: "chair", 2: "chair", 3: "chair"}, POOL, 5)
    assert "aligned" in text
    assert all(w in text for w in ("first chair", "second chair", "third chair"))


def test_pairwise_rejects_multi_relation():
    with pytest.raises(ValueError):
        gen_pairwise(("a", R.BETWEEN, "b"), POOL, 0)


def test_classify_star_examples():
    assert classify_star([L, L, L]) is ClusterKind.ALL_SAME
    assert classify_star([L, L, A]) is ClusterKind.TWO_SAME
    assert classify_star([L, A, B]) is ClusterKind.ALL_DISTINCT
    with pytest.raises(ValueError):
        classify_star([L, L])


@given(st.lists(st.sampled_from(list(R)), min_size=3, max_size=3))
def test_classify_star_permutation_invariant(rels):
    kinds = {classify_star(list(p)) for p in itertools.permutations(rels)}
    assert len(kinds) == 1


def test_star_all_same_single_clause():
    text = gen_star("table", [(L, "chair"), (L, "stool"), (L, "bench")], POOL, 0, template_index=0)
    assert re.fullmatch(r"The table is (near )?to the left of the chair, stool and bench\.", text)


def test_star_two_same_pair_first():
    text = gen_star("table", [(L, "chair"), (A, "rug"), (L, "stool")], POOL, 0, template_index=0)
    # the repeated relation leads with its two anchors, the odd one closes the sentence
    assert text.index("chair") < text.index("stool") < text.index("rug")
    assert re.match(r"The table is (near )?to the left of the chair and stool, and is (above|over) the rug\.", text)


def test_template_slots_audit():
    doc = json.loads(POOL_FILE.read_text())
    assert all(slots_of(t) == {"target", "relation", "anchor"} for t in doc["pairwise"])
    assert all(slots_of(t) == {"target", "relation", "anchor1", "anchor2"} for t in doc["multi"]["between"])
    assert all(slots_of(t) == {"members", "relation"} for t in doc["multi"]["aligned"])
    assert set(doc["lexicon"]) == {r.value for r in R}


def test_pool_with_wrong_slot_rejected(tmp_path):
    doc = json.loads(POOL_FILE.read_text())
    doc["pairwise"].append("The {target} is {relatoin} the {anchor}.")
    p = tmp_path / "pool.json"
    p.write_text(json.dumps(doc))
    with pytest.raises(ConfigError, match="relatoin"):
        load_pool(p)
    with pytest.raises(ConfigError):
        load_pool(tmp_path / "none.json")


def test_every_relation_renders():
    for r in R:
        if r.category.value == "multi-object":
            continue
        text = gen_pairwise(("lamp", r, "desk"), POOL, 1)
        assert "lamp" in text and "desk" in text and text.endswith(".")


# -- prompts -----------------------------------------------------------------


def n(i, label, lo, hi):
    return ObjectNode(i, label, AABB(lo, hi), 1)


def bedroom_graph():
    nodes = [
        n(0, "floor", (0, 0, -0.05), (5, 5, 0)),
        n(1, "bed", (1.5, 1, 0), (3.5, 3, 0.6)),
        n(2, "nightstand", (0.8, 1.2, 0), (1.3, 1.7, 0.6)),
        n(3, "nightstand", (3.7, 1.2, 0), (4.2, 1.7, 0.6)),
        n(4, "lamp", (0.9, 1.3, 0.6), (1.2, 1.6, 1.0)),
        n(5, "wall", (0, 4.9, 0), (5, 5, 2.5)),
        n(6, "painting", (2, 4.85, 1.2), (3, 4.89, 1.8)),
    ]
    return build_graph_from_nodes("bedroom", nodes, GraphConfig(), room_type="bedroom")


def test_scene_prompt_counts():
    p = build_scene_prompt(bedroom_graph(), SceneSample(), 0)
    assert p.payload["object_count"]["nightstand"] == 2
    assert p.payload["scene_type"] == "bedroom"
    assert len(p.payload["relation"]) == min(20, len(bedroom_graph().edges))


def test_scene_prompt_no_edges():
    p = build_scene_prompt(bedroom_graph(), SceneSample(max_edges=0), 0)
    assert p.payload["relation"] == []
    assert sum(p.payload["object_count"].values()) == 7


def test_scene_prompt_deterministic():
    g = bedroom_graph()
    a = build_scene_prompt(g, SceneSample(max_nodes=4, max_edges=3), 9)
    b = build_scene_prompt(g, SceneSample(max_nodes=4, max_edges=3), 9)
    assert json.dumps(a.payload) == json.dumps(b.payload)
    assert a.prompt == b.prompt


def test_prompt_files_verbatim_and_filled():
    for kind in PROMPT_FILES:
        assert prompt_text(kind).strip()
    req = RephraseRequest("referral-subject-locked", "The lamp is above the nightstand.", "lamp", ("nightstand",))
    text = build_prompt(req)
    assert "The lamp is above the nightstand." in text and "$" not in text.replace("$$", "")


def test_request_validation():
    with pytest.raises(ValueError):
        RephraseRequest("referral-simple")
    with pytest.raises(ValueError):
        RephraseRequest("scene-summary", "x")
    with pytest.raises(ValueError):
        RephraseRequest("referral-subject-locked", "x", "lamp")


# -- rephrasing --------------------------------------------------------------

REQ = RephraseRequest("referral-simple", "The bed is between desk and nightstand.", "bed")


def test_stub_identity():
    res = rephrase(REQ, StubRephraseClient())
    assert res.text == REQ.text and res.flags == ()


def test_guard_rejects_dropped_target():
    res = rephrase(REQ, StubRephraseClient("drop-target"))
    assert res.text == REQ.text and res.flags == (FLAG_REJECTED,)


def test_client_failure_keeps_original():
    res = rephrase(REQ, StubRephraseClient("fail"))
    assert res.text == REQ.text and res.flags == (FLAG_FAILED,)


def http_client(handler):
    return HttpRephraseClient("http://rephrase.test/v1", transport=httpx.MockTransport(handler))


def test_http_two_sentences_trimmed():
    seen = {}

    def handler(request):
        seen.update(json.loads(request.content))
        return httpx.Response(200, json={"text": "The bed sits between the desk and nightstand. It is large."})

    res = rephrase(REQ, http_client(handler))
    assert res.text == "The bed sits between the desk and nightstand."
    assert res.flags == (FLAG_TRIMMED,)
    assert seen["kind"] == "referral-simple" and REQ.text in seen["prompt"]


def test_http_error_is_failure():
    res = rephrase(REQ, http_client(lambda r: httpx.Response(503)))
    assert res.flags == (FLAG_FAILED,)
    res = rephrase(REQ, http_client(lambda r: httpx.Response(200, json={"nope": 1})))
    assert res.flags == (FLAG_FAILED,)


def test_rephrase_many_keeps_order():
    reqs = [RephraseRequest("referral-simple", f"The lamp {i} is here.", "lamp") for i in range(20)]
    out = rephrase_many(reqs, StubRephraseClient(), max_in_flight=8)
    assert [r.text for r in out] == [q.text for q in reqs]


# -- records -----------------------------------------------------------------


def test_scene_language_template_only(suite_graphs):
    g = suite_graphs[0]
    recs = scene_language(g, POOL, LangConfig(referrals_per_scene=5, star_per_scene=0, scene_captions_per_scene=0), 0)
    assert len(recs) == 5
    assert all(r.source == "template" and r.kind == "object_referral" for r in recs)
    assert [r.record_id for r in recs] == sorted(r.record_id for r in recs)


def test_scene_language_with_identity_stub(suite_graphs):
    g = suite_graphs[1]
    cfg = LangConfig(referrals_per_scene=5, star_per_scene=1)
    recs = scene_language(g, POOL, cfg, 0, StubRephraseClient())
    tmpl = {(r.kind, r.target_id, r.anchor_ids, r.relation, r.template): r.text for r in recs if r.source == "template"}
    reph = [r for r in recs if r.source == "rephrased"]
    assert reph and all(tmpl[(r.kind, r.target_id, r.anchor_ids, r.relation, r.template)] == r.text for r in reph)
    assert sum(r.source == "summary" for r in recs) == 1


def test_scene_language_deterministic(suite_graphs):
    g = suite_graphs[2]
    a = scene_language(g, POOL, LangConfig(), 4)
    b = scene_language(g, POOL, LangConfig(), 4)
    assert [r.to_dict() for r in a] == [r.to_dict() for r in b]


def test_structural_labels_never_targets(suite_graphs):
    for g in suite_graphs[:20]:
        labels = {nd.id: nd.label for nd in g.nodes}
        for r in scene_language(g, POOL, LangConfig(), 0):
            if r.target_id is not None:
                assert labels[r.target_id] not in ("floor", "wall", "ceiling")


def test_star_skipped_with_warning(caplog):
    g = bedroom_graph()
    with caplog.at_level(logging.WARNING):
        recs = star_records(g, POOL, 50, 0)
    assert len(recs) < 50
    assert "star references requested" in caplog.text


def test_star_records_family(suite_graphs):
    seen = set()
    for g in suite_graphs:
        for r in star_records(g, POOL, 2, 0, ("floor", "wall")):
            assert len(set(r.anchor_ids)) == 3
            seen.add(star_family(r, g))
    assert seen == set(ClusterKind)
