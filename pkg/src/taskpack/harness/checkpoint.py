"""Binary checkpoint container for a full supernet state.

Layout: magic ``ESPN`` | u32 version (little-endian) | u64 header length |
UTF-8 JSON header | raw sections in header-declared order.  Float sections
are little-endian float32; mask sections are 64-bit words with little-endian
bit order (see masks.pack_bits).  load(save(state)) is bit-exact.
"""

from __future__ import annotations

import json
import struct

import numpy as np

from ..errors import (
    CheckpointMagicError,
    CheckpointVersionError,
    SectionLengthError,
)
from ..masks import (
    SupernetState,
    TaskMask,
    mask_union,
    pack_bits,
    unpack_bits,
)
from ..nn.arch import Architecture, BnParams, ParamStore

MAGIC = b"ESPN"
VERSION = 1


def _f32_section(name, arrays):
    data = b"".join(np.ascontiguousarray(a, dtype="<f4").tobytes() for a in arrays)
    entry = {
        "name": name,
        "kind": "f32",
        "shapes": [list(a.shape) for a in arrays],
        "byte_len": len(data),
    }
    return entry, data


def _bits_section(name, mask):
    data = pack_bits(mask)
    entry = {
        "name": name,
        "kind": "bits",
        "shapes": [list(m.shape) for m in mask],
        "byte_len": len(data),
    }
    return entry, data


def save_checkpoint(state: SupernetState, path) -> None:
    sections, blobs = [], []

    def add(entry_data):
        entry, data = entry_data
        sections.append(entry)
        blobs.append(data)

    add(_f32_section("weights", state.params.weights))
    add(_f32_section("biases", state.params.biases))
    task_ids = list(state.task_masks.keys())
    for i, tid in enumerate(task_ids):
        tm = state.task_masks[tid]
        bank = state.bn_banks[tid]
        add(_bits_section(f"task{i}/neurons", tm.neurons))
        add(_bits_section(f"task{i}/weights", tm.weights))
        add(_f32_section(f"task{i}/bn_gamma", bank.gamma))
        add(_f32_section(f"task{i}/bn_beta", bank.beta))
        add(_f32_section(f"task{i}/bn_mean", bank.running_mean))
        add(_f32_section(f"task{i}/bn_var", bank.running_var))
        if tid in state.heads:
            w, b = state.heads[tid]
            add(_f32_section(f"task{i}/head", [w, b]))

    header = {
        "arch": state.arch.to_json(),
        "rng_seed": int(state.params.rng_seed),
        "task_ids": task_ids,
        "task_meta": [state.task_meta.get(t, {}) for t in task_ids],
        "bn": {"momentum": 0.1, "eps": 1e-5},
        "sections": sections,
    }
    if state.bn_banks:
        any_bank = next(iter(state.bn_banks.values()))
        header["bn"] = {"momentum": any_bank.momentum, "eps": any_bank.eps}
    header_bytes = json.dumps(header, sort_keys=True).encode("utf-8")

    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(header_bytes)))
        f.write(header_bytes)
        for blob in blobs:
            f.write(blob)


def _reshape_f32(data, shapes):
    out, pos = [], 0
    flat = np.frombuffer(data, dtype="<f4")
    for shape in shapes:
        size = int(np.prod(shape))
        out.append(flat[pos : pos + size].reshape(shape).copy())
        pos += size
    return out


def load_checkpoint(path) -> SupernetState:
    with open(path, "rb") as f:
        blob = f.read()
    if blob[:4] != MAGIC:
        raise CheckpointMagicError(f"{path}: bad magic {blob[:4]!r}")
    (version,) = struct.unpack("<I", blob[4:8])
    if version != VERSION:
        raise CheckpointVersionError(f"{path}: unsupported version {version}")
    (header_len,) = struct.unpack("<Q", blob[8:16])
    header_end = 16 + header_len
    if len(blob) < header_end:
        raise SectionLengthError(f"{path}: truncated header")
    header = json.loads(blob[16:header_end].decode("utf-8"))

    payload = {}
    pos = header_end
    for entry in header["sections"]:
        want = entry["byte_len"]
        data = blob[pos : pos + want]
        if len(data) != want:
            raise SectionLengthError(
                f"{path}: section {entry['name']} wants {want} bytes, file has {len(data)}"
            )
        if entry["kind"] == "f32":
            expect = 4 * sum(int(np.prod(s)) for s in entry["shapes"])
        else:
            bits = sum(int(np.prod(s)) for s in entry["shapes"])
            expect = 8 * ((bits + 63) // 64)
        if want != expect:
            raise SectionLengthError(
                f"{path}: section {entry['name']} declares {want} bytes, shapes need {expect}"
            )
        payload[entry["name"]] = (entry, data)
        pos += want
    if pos != len(blob):
        raise SectionLengthError(f"{path}: {len(blob) - pos} trailing bytes")

    arch = Architecture.from_json(header["arch"])

    def f32(name):
        entry, data = payload[name]
        return _reshape_f32(data, entry["shapes"])

    def bits(name):
        entry, data = payload[name]
        return unpack_bits(data, [tuple(s) for s in entry["shapes"]])

    params = ParamStore(f32("weights"), f32("biases"), header["rng_seed"])
    state = SupernetState(arch=arch, params=params)
    bn_cfg = header.get("bn", {"momentum": 0.1, "eps": 1e-5})
    for i, tid in enumerate(header["task_ids"]):
        neurons = bits(f"task{i}/neurons")
        weights = bits(f"task{i}/weights")
        state.task_masks[tid] = TaskMask(neurons, weights)
        state.bn_banks[tid] = BnParams(
            gamma=f32(f"task{i}/bn_gamma"),
            beta=f32(f"task{i}/bn_beta"),
            running_mean=f32(f"task{i}/bn_mean"),
            running_var=f32(f"task{i}/bn_var"),
            momentum=bn_cfg["momentum"],
            eps=bn_cfg["eps"],
        )
        if f"task{i}/head" in payload:
            w, b = f32(f"task{i}/head")
            state.heads[tid] = (w, b)
        state.task_meta[tid] = header["task_meta"][i]
        state.m_all = mask_union(state.m_all, weights)
        for h in range(arch.n_hidden):
            state.used_neurons[h] |= neurons[h]
    return state
