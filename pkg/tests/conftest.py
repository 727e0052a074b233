import pytest

from pufhsm import aes
from pufhsm.rsa import rsa_keygen

FIPS_C_KEY = bytes.fromhex("000102030405060708090a0b0c0d0e0f")
FIPS_C_PLAIN = bytes.fromhex("00112233445566778899aabbccddeeff")
FIPS_C_CIPHER = bytes.fromhex("69c4e0d86a7b0430d8cdb78070b4c55a")

ACCEPTANCE_RESULTS = []


def _kat_ok() -> bool:
    sched = aes.aes_key_expansion(FIPS_C_KEY)
    return aes.aes_encrypt_block(FIPS_C_PLAIN, sched) == FIPS_C_CIPHER


@pytest.fixture(scope="session")
def aes_kat_gate():
    """Crypto tests depend on the FIPS-197 Appendix C vector passing first."""
    if not _kat_ok():
        pytest.fail("FIPS-197 Appendix C known-answer test failed; crypto results are meaningless")


def pytest_collection_modifyitems(items):
    # the known-answer test runs before anything else
    items.sort(key=lambda item: 0 if item.name == "test_fips197_appendix_c_known_answer" else 1)


@pytest.fixture(scope="session")
def small_keys():
    return rsa_keygen(512, rng_seed=11)


@pytest.fixture(scope="session")
def other_small_keys():
    return rsa_keygen(512, rng_seed=12)


@pytest.fixture(scope="session")
def keys_1024():
    return rsa_keygen(1024, rng_seed=3)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number, title, ok, seconds, note in sorted(ACCEPTANCE_RESULTS):
        status = "PASS" if ok else "FAIL"
        terminalreporter.write_line(f"[{status}] {number}. {title} ({seconds:.1f} s){' - ' + note if note else ''}")
