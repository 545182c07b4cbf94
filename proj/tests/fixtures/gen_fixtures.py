"""Regenerates the reference fixtures under tests/fixtures/.

Oracles are third-party implementations, independent of the C++ code:
  * pretokenize.json  - pieces from the `regex` module with the GPT-2 pattern
  * hf_toy/           - a randomly initialised transformers GPT2LMHeadModel
                        (vocab 512, 2 layers, d_model 16) written in the tensor
                        container format, with GPT2Tokenizer ids and logits

vocab.json / merges.txt in hf_toy/ come from `clap toy-gen --vocab 512`.
Run from the repository root: python3 tests/fixtures/gen_fixtures.py
"""
import json
import os
import struct

import regex
import torch
from transformers import GPT2Config, GPT2LMHeadModel, GPT2Tokenizer

HERE = os.path.dirname(os.path.abspath(__file__))
PATTERN = r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""

PRETOK_CASES = [
    "",
    "Hello world",
    "  leading spaces",
    "trailing spaces   ",
    "tabs\tand\nnewlines\n\n",
    "What is EEG?",
    "I'm sure they'll say it's fine, we've done 'this' before.",
    "I'M SHOUTING 'S",
    "numbers 123 4.5e6 and 1,000,000",
    "café naïve résumé",
    "東京都 2024年",
    "emoji \U0001F600\U0001F680 mixed!!",
    "١٢٣ arabic-indic digits ½ Ⅷ",
    "a  b   c    d",
    "end with space ",
    " ",
    " nbsp em　ideographic",
    "x\r\ny",
    "!!!???...",
    "  !!",
    "combining é marks",
    "राम हिंदी",
]

PROMPTS = [
    "What is EEG? EEG records electrical activity of the brain.",
    "Spikes between seizures are seen on routine recordings.",
    "Café naïve 東京 \U0001F600 -- résumé's 42 items",
    "a",
]


def write_container(path, tensors, metadata):
    header, blobs, offset = {}, [], 0
    for name, t in tensors:
        data = t.detach().to(torch.float32).contiguous().numpy().tobytes()
        header[name] = {"dtype": "F32", "shape": list(t.shape), "data_offsets": [offset, offset + len(data)]}
        blobs.append(data)
        offset += len(data)
    header["__metadata__"] = metadata
    raw = json.dumps(header, separators=(",", ":")).encode()
    raw += b" " * ((8 - len(raw) % 8) % 8)
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(raw)))
        f.write(raw)
        for b in blobs:
            f.write(b)


def gen_pretokenize():
    cases = [{"text": s, "pieces": regex.findall(PATTERN, s)} for s in PRETOK_CASES]
    with open(os.path.join(HERE, "pretokenize.json"), "w", encoding="utf-8") as f:
        json.dump(cases, f, ensure_ascii=False, indent=1)


def gen_hf_toy():
    out = os.path.join(HERE, "hf_toy")
    tok = GPT2Tokenizer(os.path.join(out, "vocab.json"), os.path.join(out, "merges.txt"))
    cfg = GPT2Config(vocab_size=512, n_positions=64, n_embd=16, n_layer=2, n_head=2,
                     activation_function="gelu_new", resid_pdrop=0.0, embd_pdrop=0.0, attn_pdrop=0.0)
    torch.manual_seed(1234)
    model = GPT2LMHeadModel(cfg).eval()
    with torch.no_grad():
        for name, p in model.named_parameters():
            if name.endswith("ln_1.weight") or name.endswith("ln_2.weight") or name == "transformer.ln_f.weight":
                p.copy_(1.0 + 0.1 * torch.randn_like(p))
            else:
                p.copy_(0.1 * torch.randn_like(p))
        model.tie_weights()

    sd = model.transformer.state_dict()
    tensors = [("wte", sd["wte.weight"]), ("wpe", sd["wpe.weight"])]
    for i in range(cfg.n_layer):
        for part in ["ln_1.weight", "ln_1.bias", "attn.c_attn.weight", "attn.c_attn.bias",
                     "attn.c_proj.weight", "attn.c_proj.bias", "ln_2.weight", "ln_2.bias",
                     "mlp.c_fc.weight", "mlp.c_fc.bias", "mlp.c_proj.weight", "mlp.c_proj.bias"]:
            tensors.append((f"h.{i}.{part}", sd[f"h.{i}.{part}"]))
    tensors += [("ln_f.weight", sd["ln_f.weight"]), ("ln_f.bias", sd["ln_f.bias"])]
    meta = {"n_layer": "2", "n_head": "2", "d_model": "16", "d_mlp": "64", "vocab_size": "512", "n_ctx": "64"}
    write_container(os.path.join(out, "model.tensors"), tensors, meta)

    prompts = []
    for text in PROMPTS:
        ids = tok.encode(text)
        with torch.no_grad():
            logits = model(torch.tensor([ids])).logits[0]
        prompts.append({"text": text, "token_ids": ids,
                        "last_logits": [float(f"{float(x):.9g}") for x in logits[-1]]})
    fixtures = {"model_id": "transformers-GPT2LMHeadModel-random-seed1234",
                "transformers_version": __import__("transformers").__version__,
                "prompts": prompts}
    with open(os.path.join(out, "fixtures.json"), "w", encoding="utf-8") as f:
        json.dump(fixtures, f, ensure_ascii=False)


def gen_tokenizer_cases(n=400, seed=7):
    import random
    rng = random.Random(seed)
    alphabet = (list("abcdefghijklmnopqrstuvwxyz") * 4 + list("THEQ") + list("0123456789")
                + list("    ") + ["\n", "\t", "'", "'s", "'ll", "'re", "?", "!", ".", ",", "-", "  "]
                + ["é", "ß", "東", "京", "\U0001F600", "Ω", "½", "\u00a0", "\u3000", "ह", "\u0301"])
    tok = GPT2Tokenizer(os.path.join(HERE, "hf_toy", "vocab.json"), os.path.join(HERE, "hf_toy", "merges.txt"))
    cases = []
    for _ in range(n):
        text = "".join(rng.choice(alphabet) for _ in range(rng.randint(0, 40)))
        cases.append({"text": text, "token_ids": tok.encode(text)})
    with open(os.path.join(HERE, "tokenizer_cases.json"), "w", encoding="utf-8") as f:
        json.dump(cases, f, ensure_ascii=False)


if __name__ == "__main__":
    gen_pretokenize()
    gen_hf_toy()
    gen_tokenizer_cases()
