import os

import pytest

os.environ.setdefault("HF_HUB_OFFLINE", "1")
os.environ.setdefault("TRANSFORMERS_OFFLINE", "1")


@pytest.fixture(scope="session")
def tiny_model_dir(tmp_path_factory):
    """Small random-weight causal LM saved locally; stands in for a hub download."""
    import torch
    from transformers import GPT2Config, GPT2LMHeadModel

    torch.manual_seed(0)
    config = GPT2Config(
        n_layer=4,
        n_embd=32,
        n_head=2,
        vocab_size=96,
        n_positions=256,
        bos_token_id=None,
        eos_token_id=None,
    )
    path = tmp_path_factory.mktemp("model") / "tiny-causal-lm"
    GPT2LMHeadModel(config).save_pretrained(path)
    return str(path)
