#!/usr/bin/env python3
# Copyright 2026 The promptts Authors
#
# Licensed under the Apache License, Version 2.0 (the "License");
# you may not use this file except in compliance with the License.
# You may obtain a copy of the License at
#
#     http://www.apache.org/licenses/LICENSE-2.0
#
# Unless required by applicable law or agreed to in writing, software
# distributed under the License is distributed on an "AS IS" BASIS,
# WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
# See the License for the specific language governing permissions and
# limitations under the License.

"""Export a Hugging Face BERT checkpoint to the promptts archive format.

Writes <output>/bert_weights.ptts and <output>/vocab.txt, the two files named
by prompt_encoder.backbone_path and prompt_encoder.vocab_path.
"""

import argparse
import json
import pathlib
import struct

import numpy as np

MAGIC = b"PTTSARC\0"
VERSION = 1
CONFIG_KEYS = (
    "vocab_size",
    "hidden_size",
    "num_hidden_layers",
    "num_attention_heads",
    "intermediate_size",
    "max_position_embeddings",
    "type_vocab_size",
    "layer_norm_eps",
)


def write_archive(path, meta, tensors):
    """Serialize {name: 2-D float64 array} with JSON metadata."""
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")
    with open(path, "wb") as f:
        f.write(MAGIC)
        f.write(struct.pack("<I", VERSION))
        f.write(struct.pack("<Q", len(meta_bytes)))
        f.write(meta_bytes)
        f.write(struct.pack("<Q", len(tensors)))
        for name in sorted(tensors):
            arr = np.ascontiguousarray(tensors[name], dtype="<f8")
            if arr.ndim == 1:
                arr = arr.reshape(1, -1)
            encoded = name.encode("utf-8")
            f.write(struct.pack("<Q", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<QQ", arr.shape[0], arr.shape[1]))
            f.write(arr.tobytes())


def rename(key):
    """Maps a BertModel state-dict key to the archive name, or None to skip."""
    if key.startswith("bert."):
        key = key[len("bert."):]
    if not (key.startswith("embeddings.") or key.startswith("encoder.layer.")):
        return None
    if key.endswith("position_ids") or key.endswith("token_type_ids"):
        return None
    if key.startswith("embeddings.") and key.endswith("_embeddings.weight"):
        return key[: -len(".weight")]
    if ".LayerNorm." in key or key.endswith("LayerNorm.weight") or key.endswith("LayerNorm.bias"):
        return key.replace("LayerNorm.weight", "LayerNorm.gamma").replace("LayerNorm.bias", "LayerNorm.beta")
    return key


def export(model, vocab, output_dir, model_name):
    """Writes the weight archive and vocab.txt for a loaded BertModel."""
    output_dir = pathlib.Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    cfg = model.config
    meta = {
        "kind": "bert-weights",
        "model_name": model_name,
        "config": {k: getattr(cfg, k) for k in CONFIG_KEYS},
    }
    tensors = {}
    for key, value in model.state_dict().items():
        name = rename(key)
        if name is None:
            continue
        arr = value.detach().cpu().double().numpy()
        # Linear weights are stored [in x out].
        if arr.ndim == 2 and not name.startswith("embeddings."):
            arr = arr.T
        tensors[name] = arr
    write_archive(output_dir / "bert_weights.ptts", meta, tensors)
    (output_dir / "vocab.txt").write_text("\n".join(vocab) + "\n", encoding="utf-8")
    return output_dir


def vocab_list(tokenizer):
    items = sorted(tokenizer.get_vocab().items(), key=lambda kv: kv[1])
    return [tok for tok, _ in items]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--model", default="bert-base-uncased", help="hub id or local directory")
    parser.add_argument("--output", required=True, help="output directory")
    args = parser.parse_args()

    from transformers import AutoTokenizer, BertModel

    model = BertModel.from_pretrained(args.model, add_pooling_layer=False)
    tokenizer = AutoTokenizer.from_pretrained(args.model)
    out = export(model, vocab_list(tokenizer), args.output, args.model)
    print(f"wrote {out / 'bert_weights.ptts'} and {out / 'vocab.txt'}")


if __name__ == "__main__":
    main()
