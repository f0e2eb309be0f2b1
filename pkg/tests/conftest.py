import pytest

from tsa.encoder import EncoderConfig
from tsa.tokenizer import Vocabulary

from helpers import ACCEPTANCE_LINES


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)


@pytest.fixture
def small_vocab():
    return Vocabulary(["[PAD]", "[UNK]", "[CLS]", "[SEP]", "[TAR]",
                       "whatsapp", "çök", "##tü", "de", "biraz", "rahatladım",
                       "coca", "cola", "daha", "iyi", "a", "b", "##a"])


@pytest.fixture
def tiny_config():
    return EncoderConfig(vocab_size=18, hidden_size=8, num_layers=2, num_heads=2,
                         ffn_size=16, max_len=10, dropout_rate=0.0, seed=3)
