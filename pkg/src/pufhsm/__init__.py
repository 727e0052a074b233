"""Software model of a PUF-gated hybrid-encryption hardware security module."""
from .aes import aes_decrypt_block, aes_encrypt_block, aes_key_expansion, ctr_transform
from .envelope import Envelope, WrappedKey, seal, unseal
from .keybits import AuthToken, ChallengeSet, Pin, derive_auth_token, derive_challenges, key_to_bits
from .puf import (CrpTable, PufInstance, PufStats, eval_noisy, evaluate, inter_instance_uniqueness,
                  load_table3, new_simulated_puf, paper_uniqueness, reliability)
from .rsa import RsaKeyPair, rsa_apply, rsa_keygen

__version__ = "0.1.0"
