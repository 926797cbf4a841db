from dataclasses import replace

import pytest

from scriptrefine.gateway import StructuredOutputExhausted
from scriptrefine.revision import (
    EmptyDecomposition,
    EnhancedPlot,
    Phase,
    PhaseError,
    SceneBeat,
    apply_storyline,
    beat_updates,
    brainstorm_plot,
    decompose_plot,
    edit_character_description,
    edit_dialogue,
    edit_scene_description,
    edit_scenes,
    edit_script_description,
    edit_title,
    format_routed,
    polish_dialogue,
    polish_scene,
    polish_script,
)
from scriptrefine.scene_review import IntegratedFinding, RoutedFinding
from scriptrefine.script import UnknownCharacter, scene_context

from conftest import FnBackend, fixture_gateway, one_role, tiny_script
from scriptrefine.gateway import Gateway


def beats(n, tag="new"):
    return [SceneBeat(f"{tag} place {k}", "Climax", f"{tag} beat {k}") for k in range(1, n + 1)]


def routed(label, *priorities):
    return tuple(
        RoutedFinding(IntegratedFinding(1, "s", f"issue p{p}", f"fix p{p}", p), label, "r")
        for p in priorities
    )


# --- storyline ---------------------------------------------------------------


def test_brainstorm_pass_through_and_vacuous_guidance():
    gw = one_role("brainstormer", {"enhanced_plot": "A bolder plot."})
    assert brainstorm_plot(tiny_script(2), "sum", [], gw) == EnhancedPlot("A bolder plot.")
    assert "script analysis experts:\nnone\n" in gw.transcripts[0].prompt


def test_storyline_locked_in_detail_phase():
    gw = one_role("brainstormer", {"enhanced_plot": "x"})
    with pytest.raises(PhaseError):
        brainstorm_plot(tiny_script(1), "s", [], gw, phase=Phase.DETAIL)
    with pytest.raises(PhaseError):
        decompose_plot("s", EnhancedPlot("x"), gw, phase="detail")
    assert gw.transcripts == []


def test_enhanced_plot_non_empty():
    with pytest.raises(ValueError):
        EnhancedPlot("  ")


def test_decompose_seven_beats_in_order():
    arr = [{"place": f"P{k}", "plot_element": "E", "beat": f"B{k}"} for k in range(7)]
    gw = one_role("decomposer", "```json\n" + __import__("json").dumps(arr) + "\n```")
    out = decompose_plot("orig", EnhancedPlot("x"), gw)
    assert [b.place for b in out] == [f"P{k}" for k in range(7)]


def test_decompose_missing_place_exhausts():
    gw = one_role("decomposer", [{"plot_element": "E", "beat": "B"}], repeat=True)
    with pytest.raises(StructuredOutputExhausted):
        decompose_plot("orig", EnhancedPlot("x"), gw)


def test_decompose_empty():
    with pytest.raises(EmptyDecomposition):
        decompose_plot("orig", EnhancedPlot("x"), one_role("decomposer", []))


def test_apply_same_length_carries_text():
    s = tiny_script(5)
    out = apply_storyline(s, beats(5))
    assert len(out) == 5
    for old, new in zip(s.scenes, out.scenes):
        assert (new.scene_description, new.dialogue) == (old.scene_description, old.dialogue)
        assert new.beat.startswith("new beat")


def test_apply_growth():
    out = apply_storyline(tiny_script(5), beats(7))
    assert len(out) == 7
    assert [(s.scene_description, s.dialogue) for s in out.scenes[5:]] == [("", ""), ("", "")]


def test_apply_shrink():
    s = tiny_script(5)
    out = apply_storyline(s, beats(3))
    assert len(out) == 3 and out.scene(3).dialogue == s.scene(3).dialogue


def test_apply_empty_rejected():
    with pytest.raises(EmptyDecomposition):
        apply_storyline(tiny_script(2), [])


def test_beat_updates():
    s = tiny_script(2)
    same = [SceneBeat(x.place, x.plot_element, x.beat) for x in s.scenes]
    after = apply_storyline(s, same[:1] + beats(2)[1:] + beats(3)[2:])
    updates = beat_updates(s, after)
    assert updates[1].startswith("Unchanged")
    assert updates[2].startswith("Old:") and "New: new place 2" in updates[2]
    assert updates[3].startswith("New scene added")


# --- editors -----------------------------------------------------------------


def test_scene_editor_replaces():
    s = tiny_script(1)
    gw = one_role("scene_editor", {"scene_description": "Fog coils."})
    assert edit_scene_description(s.scene(1), s.characters, routed("scene_description", 5), gw) == "Fog coils."


def test_scene_editor_skip_rule():
    s = tiny_script(1)
    gw = one_role("scene_editor")
    assert edit_scene_description(s.scene(1), s.characters, (), gw) == s.scene(1).scene_description
    assert gw.transcripts == []


def test_scene_editor_fills_empty_draft():
    s = apply_storyline(tiny_script(1), beats(2))
    gw = one_role("scene_editor", {"scene_description": "new room"})
    assert edit_scene_description(s.scene(2), s.characters, (), gw) == "new room"
    assert "Original Scene Description (to enhance)\n(none)" in gw.transcripts[0].prompt


def test_dialogue_editor_boundary_and_skip():
    s = tiny_script(2)
    gw = one_role("dialogue_editor", {"dialogue": "Ana: (quiet) Go."})
    assert edit_dialogue(s.scene(1), s.characters, None, routed("dialogue", 3), gw) == "Ana: (quiet) Go."
    assert "Previous Dialogue (for continuity)\n(none)" in gw.transcripts[0].prompt
    assert edit_dialogue(s.scene(2), s.characters, "x", (), gw) == s.scene(2).dialogue
    assert len(gw.transcripts) == 1


def test_suggestions_sorted_by_priority():
    text = format_routed(routed("dialogue", 2, 9, 5))
    assert text.index("p9") < text.index("p5") < text.index("p2")
    assert format_routed(()) == "none"


def test_edit_scenes_chains_dialogue():
    s = tiny_script(3)
    seen = []

    def fn(req):
        if req.role.value == "dialogue_editor":
            seen.append(req.prompt)
            return {"dialogue": f"final {len(seen)}"}
        return {"scene_description": "desc"}

    gw = Gateway(FnBackend(fn))
    plan = {k: (routed("dialogue", 5), routed("scene_description", 5)) for k in (1, 2, 3)}
    out = edit_scenes(s, plan, gw)
    assert [x.dialogue for x in out.scenes] == ["final 1", "final 2", "final 3"]
    assert "Previous Dialogue (for continuity)\nfinal 1" in seen[1]
    assert "Previous Dialogue (for continuity)\nfinal 2" in seen[2]
    assert all(x.scene_description == "desc" for x in out.scenes)


def test_edit_scenes_skip_law_spends_nothing():
    gw = one_role("scene_editor")
    s = tiny_script(3)
    assert edit_scenes(s, {}, gw) == s
    assert gw.transcripts == []


def test_title_keep_and_change():
    s = tiny_script(1)
    assert edit_title(s, "p", one_role("title_editor", {"title": "Trials"})) == s.title
    assert edit_title(s, "p", one_role("title_editor", {"title": "Ordeal"})) == "Ordeal"


def test_title_empty_exhausts():
    with pytest.raises(StructuredOutputExhausted):
        edit_title(tiny_script(1), "p", one_role("title_editor", {"title": ""}, repeat=True))


def test_title_change_is_recorded():
    doc = {"responses": {"title_editor": [{"title": "Ordeal"}],
                         "character_desc_editor": {"repeat": [{"characters_description": "d"}]}}}
    gw = fixture_gateway(doc)
    out = edit_script_description(tiny_script(1), "plot", gw)
    assert out.title == "Ordeal" and out.characters == {"Ana": "d", "Ben": "d"}
    assert gw.warnings[0]["kind"] == "title_changed"


def test_character_editor():
    s = replace(tiny_script(1), characters={"Ana": "x", "Zed": "ghost"})
    gw = one_role("character_desc_editor", {"characters_description": "better"}, repeat=True)
    assert edit_character_description(s, "Zed", "plot", gw) == "better"
    assert "(no direct appearances found)" in gw.transcripts[0].prompt
    with pytest.raises(UnknownCharacter):
        edit_character_description(s, "Nobody", "plot", gw)


# --- polish ------------------------------------------------------------------


def test_polish_single_scene_context():
    s = tiny_script(1)
    gw = one_role("desc_polisher", {"polished_description": "p"})
    assert polish_scene(s.scene(1), scene_context(s, 1), "plot", gw) == "p"
    assert "Previous Scenes:\n(none)" in gw.transcripts[0].prompt
    assert "Next Scenes:\n(none)" in gw.transcripts[0].prompt


def test_polish_dialogue_pass():
    s = tiny_script(2)
    gw = one_role("dialogue_polisher", {"polished_dialogue": "Ana: Fine."})
    assert polish_dialogue(s.scene(1), scene_context(s, 1), s.characters, "plot", gw) == "Ana: Fine."


def echo_polisher(req):
    import re

    if req.role.value == "desc_polisher":
        m = re.search(r"Current Scene Description\n(.*?)\n\nTask", req.prompt, re.S)
        return {"polished_description": m.group(1)}
    m = re.search(r"Current Dialogue\n(.*?)\n\nDIALOGUE POLISHING", req.prompt, re.S)
    return {"polished_dialogue": m.group(1)}


def test_polish_idempotent_under_echo():
    s = tiny_script(3)
    once = polish_script(s, "plot", Gateway(FnBackend(echo_polisher)))
    assert once == s
    assert polish_script(once, "plot", Gateway(FnBackend(echo_polisher))) == once


def test_polish_runs_in_order_with_fresh_context():
    s = tiny_script(2)
    prompts = []

    def fn(req):
        prompts.append(req.prompt)
        if req.role.value == "desc_polisher":
            return {"polished_description": f"polished {len(prompts)}"}
        return {"polished_dialogue": f"Ana: polished line {len(prompts)}"}

    out = polish_script(s, "plot", Gateway(FnBackend(fn)))
    assert out.scene(1).dialogue == "Ana: polished line 2"
    # scene 2 sees scene 1's polished dialogue in its context
    assert "Ana: polished line 2" in prompts[2]
