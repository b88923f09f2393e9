#!/usr/bin/env python3
"""Writes the EATN golden files and the malformed-input corpus.

The golden tensors are encoded here with struct, independently of the C++
writer, and their expected contents are recorded in golden/manifest.json.
Run from the repository root: python3 tests/corpus/make_corpus.py
"""

import copy
import json
import random
import struct
from pathlib import Path

ROOT = Path(__file__).resolve().parents[1]
GOLDEN = ROOT / "golden"
FUZZ = ROOT / "fuzz"


def eatn(dims, bits, version=1, pad=(0, 0), ndim=None):
    head = b"EATN" + bytes([version, len(dims) if ndim is None else ndim, *pad])
    head += b"".join(struct.pack("<I", d) for d in dims)
    return head + b"".join(struct.pack("<I", b) for b in bits)


def f32_bits(x):
    return struct.unpack("<I", struct.pack("<f", x))[0]


def golden():
    GOLDEN.mkdir(exist_ok=True)
    rng = random.Random(20240611)
    cases = {
        "matrix_2x2": ([2, 2], [f32_bits(v) for v in (1.0, 2.0, 3.0, 4.0)]),
        "scalar_zero": ([1], [0]),
        "specials": ([6], [0x80000000, 0x7FC00001, 0x7F800000, 0xFF800000, 0x00000001, 0x7F7FFFFF]),
        "rank4": ([2, 1, 3, 2], [f32_bits(rng.uniform(-5, 5)) for _ in range(12)]),
        "cube_3x4x5": ([3, 4, 5], [f32_bits(rng.gauss(0, 1)) for _ in range(60)]),
        "row_1x7": ([1, 7], [rng.getrandbits(32) & 0x7F7FFFFF for _ in range(7)]),
    }
    manifest = []
    for name, (dims, bits) in cases.items():
        (GOLDEN / f"{name}.eatn").write_bytes(eatn(dims, bits))
        manifest.append({"file": f"{name}.eatn", "dims": dims, "bits": bits})
    (GOLDEN / "manifest.json").write_text(json.dumps({"tensors": manifest}, indent=2) + "\n")


def write(name, data):
    path = FUZZ / name
    path.write_bytes(data if isinstance(data, bytes) else data.encode())


def fuzz_tensors():
    base = eatn([2, 2], [f32_bits(v) for v in (1.0, 2.0, 3.0, 4.0)])
    n = 0
    for i in range(16):
        if 8 <= i < 16 and i % 4 != 0:
            continue  # high dim bytes: covered by the overflow cases below
        b = bytearray(base)
        b[i] ^= 0xFF
        write(f"eatn_flip_{i:02d}.eatn", bytes(b))
        n += 1
    for cut in range(len(base)):
        write(f"eatn_cut_{cut:02d}.eatn", base[:cut])
        n += 1
    for extra in (1, 3, 4, 17):
        write(f"eatn_trailing_{extra}.eatn", base + b"\x00" * extra)
        n += 1
    for nd in (0, 5, 9, 255):
        write(f"eatn_ndim_{nd}.eatn", eatn([2, 2], [0, 0, 0, 0], ndim=nd))
        n += 1
    for v in (0, 2, 0x10, 0xFF):
        write(f"eatn_version_{v}.eatn", eatn([2, 2], [0, 0, 0, 0], version=v))
        n += 1
    write("eatn_pad.eatn", eatn([2, 2], [0, 0, 0, 0], pad=(0, 1)))
    write("eatn_zero_dim.eatn", eatn([2, 0], []))
    write("eatn_overflow.eatn", eatn([0xFFFFFFFF] * 4, []))
    write("eatn_overflow_2.eatn", eatn([1 << 16, 1 << 16], []))
    write("eatn_lying_count.eatn", eatn([10], [0] * 8))
    write("eatn_empty.eatn", b"")
    write("eatn_text.eatn", b"not a tensor at all\n")
    return n + 7


def scene_base():
    return json.loads((ROOT.parent / "data" / "tasks" / "stack" / "scene.json").read_text())


def fuzz_scenes():
    # Loaded without depth except for scene_depth_*, which must fail on the file.
    valid = scene_base()
    base = copy.deepcopy(valid)
    base["depth_path"] = "missing_depth.eatn"
    cases = {}
    for key in list(valid):
        d = copy.deepcopy(valid)
        del d[key]
        if key not in ("task", "camera_pose"):
            cases[f"drop_{key}"] = d
    cases["depth_missing_file"] = base
    mutations = {
        "intrinsics_string": ("intrinsics", "fx=300"),
        "entities_object": ("entities", {"a": 1}),
        "entities_empty": ("entities", []),
        "grasp_scalar": ("grasp_transform", 3),
        "grasped_unknown": ("grasped_entity", "cup"),
        "grasped_number": ("grasped_entity", 4),
        "workspace_inverted": ("workspace_aabb", {"min": [1, 1, 1], "max": [0, 0, 0]}),
        "camera_list": ("camera_pose", [1, 2, 3]),
    }
    for name, (key, value) in mutations.items():
        d = copy.deepcopy(valid)
        d[key] = value
        cases[name] = d
    d = copy.deepcopy(valid)
    d["entities"][1]["id"] = d["entities"][0]["id"]
    cases["duplicate_ids"] = d
    d = copy.deepcopy(valid)
    d["entities"][0]["keypoints_3d"] = d["entities"][0]["keypoints_3d"][:2]
    cases["grasped_two_points"] = d
    d = copy.deepcopy(valid)
    d["entities"][0]["keypoints_3d"][0] = [0, 1]
    cases["keypoint_short"] = d
    d = copy.deepcopy(valid)
    d["entities"][0]["keypoints_3d"][0] = ["a", 0, 0]
    cases["keypoint_string"] = d
    d = copy.deepcopy(valid)
    d["intrinsics"]["fx"] = -1
    cases["fx_negative"] = d
    d = copy.deepcopy(valid)
    d["intrinsics"]["width"] = 0
    cases["width_zero"] = d
    d = copy.deepcopy(valid)
    d["grasp_transform"]["rotation"][0][0] = 2.0
    cases["rotation_not_orthonormal"] = d
    d = copy.deepcopy(valid)
    d["grasp_transform"]["rotation"] = [[1, 0, 0], [0, 1, 0], [0, 0, -1]]
    cases["rotation_reflection"] = d
    d = copy.deepcopy(valid)
    d["entities"][0]["id"] = ""
    cases["empty_id"] = d
    text = json.dumps(valid)
    for i, cut in enumerate((1, len(text) // 3, len(text) // 2, len(text) - 1)):
        write(f"scene_truncated_{i}.json", text[:cut])
    write("scene_not_object.json", "[1, 2, 3]")
    write("scene_nan.json", text.replace("300.0", "NaN", 1))
    for name, doc in cases.items():
        write(f"scene_{name}.json", json.dumps(doc))
    return len(cases) + 6


def fuzz_constraints():
    exprs = {
        "lexer": "(sub (z (kp 0)) 0.05",
        "lexer_char": "(sub (z (kp 0)) @)",
        "unknown_op": "(pow (z (kp 0)) 2)",
        "arity": "(add 1.0)",
        "arity_extra": "(neg 1.0 2.0)",
        "norm_scalar": "(norm 3.0)",
        "vector_top": "(kp 0)",
        "const3_expr": "(norm (const3 (add 1 2) 0 0))",
        "index_negative": "(z (kp -1))",
        "index_float": "(z (kp 1.5))",
        "index_huge": "(z (kp 99999999999999999999999))",
        "empty": "",
        "trailing": "(z (kp 0)) (z (kp 1))",
        "bare_paren": "()",
        "vec_in_scalar": "(add (kp 0) 1.0)",
    }
    n = 0
    for name, e in exprs.items():
        write(f"constraints_{name}.json", json.dumps({"constraints": [{"name": "c", "expr": e}]}))
        n += 1
    ok = {"name": "c", "expr": "(z (kp 0))"}
    docs = {
        "no_list": {},
        "list_object": {"constraints": {"c": 1}},
        "duplicate_name": {"constraints": [ok, ok]},
        "empty_name": {"constraints": [{"name": "", "expr": "(z (kp 0))"}]},
        "expr_number": {"constraints": [{"name": "c", "expr": 3}]},
        "window_reversed": {"constraints": [dict(ok, window=[0.8, 0.2])]},
        "window_outside": {"constraints": [dict(ok, window=[0.0, 1.5])]},
        "window_short": {"constraints": [dict(ok, window=[0.5])]},
        "window_string": {"constraints": [dict(ok, window=["a", 1])]},
        "missing_expr": {"constraints": [{"name": "c"}]},
    }
    for name, d in docs.items():
        write(f"constraints_{name}.json", json.dumps(d))
        n += 1
    write("constraints_garbage.json", "{\"constraints\": [")
    return n + 1


def fuzz_reports():
    rec = lambda i, acc: {"index": i, "s_vis": 0.1 * i, "s_spatial": 0.0, "accepted": acc}
    base = {"kind": "report", "rollouts": [rec(0, False), rec(1, True)], "selected_index": 1, "fallback": False}
    docs = {}
    d = copy.deepcopy(base); d["rollouts"][0]["accepted"] = True; docs["two_accepted"] = d
    d = copy.deepcopy(base); d["rollouts"][1]["accepted"] = False; docs["none_accepted"] = d
    d = copy.deepcopy(base); d["selected_index"] = 7; docs["selected_range"] = d
    d = copy.deepcopy(base); d["rollouts"][0]["index"] = 5; docs["index_order"] = d
    d = copy.deepcopy(base); d["rollouts"][0]["s_vis"] = "high"; docs["s_vis_string"] = d
    d = copy.deepcopy(base); d["fallback"] = True; docs["fallback_accepted"] = d
    d = copy.deepcopy(base); d["rollouts"] = 3; docs["rollouts_scalar"] = d
    d = copy.deepcopy(base); d["kind"] = "scene"; docs["wrong_kind"] = d
    d = copy.deepcopy(base); d["retarget"] = {"residuals": [0.1], "initial_trajectory": [], "calibration": {"alpha": 1, "beta": 0}}
    docs["residual_count"] = d
    d = copy.deepcopy(base); d["optimization"] = {"converged": "yes", "iterations": 1, "trace": [], "final_trajectory": []}
    docs["converged_string"] = d
    d = copy.deepcopy(base); d["outcome"] = {"success": 1}; docs["outcome_partial"] = d
    d = copy.deepcopy(base); del d["rollouts"][0]["s_vis"]; docs["missing_s_vis"] = d
    for name, doc in docs.items():
        write(f"report_{name}.json", json.dumps(doc))
    return len(docs)


def main():
    golden()
    FUZZ.mkdir(exist_ok=True)
    for p in FUZZ.iterdir():
        p.unlink()
    n = fuzz_tensors() + fuzz_scenes() + fuzz_constraints() + fuzz_reports()
    print(f"wrote {len(list(FUZZ.iterdir()))} corpus files ({n} planned)")


if __name__ == "__main__":
    main()
