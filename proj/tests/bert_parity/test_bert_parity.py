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

"""Compares the C++ BERT adapter and WordPiece tokenizer with transformers on
a small randomly initialized model."""

import json
import pathlib
import subprocess
import sys
import tempfile

import numpy as np
import torch
from transformers import BertConfig, BertModel, BertTokenizer

sys.path.insert(0, str(pathlib.Path(__file__).resolve().parents[2] / "tools"))
import export_bert_weights  # noqa: E402

TEXTS = [
    "A woman speaks slowly with low volume and low pitch.",
    "The speaker identity is described as soft, adult-like, gender-neutral and slightly muffled.",
    "Unbelievably RASPY voices!!",
    "zzzq unknownwordpiece",
]

WORDS = ["a", "woman", "man", "speaks", "slowly", "with", "low", "volume", "and", "pitch", "the", "speaker",
         "identity", "is", "described", "as", "soft", ",", ".", "-", "!", "adult", "like", "gender", "neutral",
         "slightly", "muff", "##led", "un", "##believ", "##ably", "ras", "##py", "voice", "##s", "z", "##z", "##q"]


def main(binary):
    torch.manual_seed(0)
    with tempfile.TemporaryDirectory() as tmp:
        tmp = pathlib.Path(tmp)
        vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]"] + WORDS
        (tmp / "vocab.txt").write_text("\n".join(vocab) + "\n")
        tokenizer = BertTokenizer(str(tmp / "vocab.txt"), do_lower_case=True)
        config = BertConfig(vocab_size=len(vocab), hidden_size=32, num_hidden_layers=2, num_attention_heads=4,
                            intermediate_size=48, max_position_embeddings=64, hidden_act="gelu")
        model = BertModel(config, add_pooling_layer=False).double().eval()
        export_bert_weights.export(model, vocab, tmp / "out", "random-tiny")

        proc = subprocess.run([binary, str(tmp / "out" / "bert_weights.ptts"), str(tmp / "out" / "vocab.txt")],
                              input="\n".join(TEXTS) + "\n", capture_output=True, text=True, check=True)
        rows = [json.loads(line) for line in proc.stdout.splitlines()]
        assert len(rows) == len(TEXTS)

        worst = 0.0
        for text, row in zip(TEXTS, rows):
            ids = tokenizer(text)["input_ids"]
            assert row["ids"] == ids, f"token ids differ for {text!r}: {row['ids']} vs {ids}"
            with torch.no_grad():
                ref = model(torch.tensor([ids])).last_hidden_state[0, 0].numpy()
            worst = max(worst, float(np.max(np.abs(ref - np.array(row["cls"])))))
        print(f"max |cls difference| = {worst:.3e}")
        assert worst < 1e-8, worst
    print("bert parity OK")


if __name__ == "__main__":
    main(sys.argv[1])
