import pytest


@pytest.fixture(scope="session")
def tiny_bert(tmp_path_factory):
    """A locally constructed BERT checkpoint with the large variant's hidden
    size, so exports carry d_e=1024 without fetching anything."""
    import torch
    from transformers import BertConfig, BertModel, BertTokenizer

    root = tmp_path_factory.mktemp("tiny-bert")
    vocab = ["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
             "price", "range", "area", "north", "cheap", "food", "want",
             "i", "the", "lea", "##ving"]
    vocab_file = root / "vocab.txt"
    vocab_file.write_text("\n".join(vocab) + "\n")

    config = BertConfig(
        vocab_size=len(vocab),
        hidden_size=1024,
        num_hidden_layers=2,
        num_attention_heads=4,
        intermediate_size=64,
        max_position_embeddings=32,
    )
    torch.manual_seed(0)
    model = BertModel(config)
    model_dir = root / "model"
    model.save_pretrained(model_dir)
    BertTokenizer(str(vocab_file)).save_pretrained(model_dir)
    return str(model_dir)
