import numpy as np
import pytest

from app.core.errors import CredentialFormatError, ParameterError
from app.models.schemas import FilterParams
from app.services.attachment import (
    Accept,
    Credential,
    EncryptedFid,
    MasterKeys,
    Reject,
    RejectReason,
    compute_tag,
    decrypt_fid,
    derive_tag_key,
    encrypt_fid,
    issue_credential,
    random_credential,
    rotate_key,
    security_check,
)
from app.services.bloom import ForwardingId, build_fid, new_link_id, random_fid_bits
from app.utils.rng import stream


@pytest.fixture
def fid(params):
    rng = stream(5, "test")
    return build_fid([new_link_id(params, rng) for _ in range(23)], params)


def test_encrypt_decrypt(fid, keys):
    efid = encrypt_fid(fid, keys.k1)
    assert len(efid.data) == 32
    assert efid.data != fid.to_bytes()
    assert encrypt_fid(fid, keys.k1) == efid
    assert decrypt_fid(efid, keys.k1) == fid


def test_encrypt_needs_whole_blocks(keys):
    with pytest.raises(ParameterError):
        encrypt_fid(ForwardingId(1, 64), keys.k1)


def test_decrypt_checks_length(fid, keys):
    efid = encrypt_fid(fid, keys.k1)
    with pytest.raises(CredentialFormatError):
        decrypt_fid(efid, keys.k1, m=320)
    with pytest.raises(CredentialFormatError):
        decrypt_fid(EncryptedFid(b"\x00" * 20), keys.k1)


def test_compute_tag_widths(fid, keys):
    efid = encrypt_fid(fid, keys.k1)
    full = compute_tag(efid, keys.k2, 64)
    short = compute_tag(efid, keys.k2, 16)
    assert short.value < 2 ** 16
    assert short.value == full.value >> 48
    assert compute_tag(efid, keys.k2, 64) == full


def test_issue_then_check_accepts(fid, keys):
    cred = issue_credential(fid, keys)
    assert cred.epoch == 0
    result = security_check(cred, keys, m=256)
    assert isinstance(result, Accept)
    assert result.fid == fid


def test_epoch_isolation(fid, keys):
    for issued in range(5):
        cred = issue_credential(fid, keys.at_epoch(issued))
        for checked in range(5):
            result = security_check(cred, keys.at_epoch(checked))
            if checked == issued:
                assert isinstance(result, Accept)
            else:
                assert result == Reject(RejectReason.STALE_EPOCH)


def test_rotate_key(keys):
    rotated = rotate_key(keys)
    assert rotated.epoch == keys.epoch + 1
    assert rotated.k1 == keys.k1
    assert rotated.k2 != keys.k2
    assert rotated.k2 == derive_tag_key(keys.root_k2, 1)


def test_rotation_rejects_old_credentials(fid, keys):
    cred = issue_credential(fid, keys)
    assert isinstance(security_check(cred, rotate_key(keys)), Reject)


def test_malformed_credentials(fid, keys):
    cred = issue_credential(fid, keys)
    short = Credential(EncryptedFid(cred.efid.data[:16]), cred.tag, cred.epoch)
    assert security_check(short, keys, m=256) == Reject(RejectReason.MALFORMED)
    narrow = MasterKeys(keys.k1, keys.root_k2, 0, 32)
    assert security_check(cred, narrow) == Reject(RejectReason.MALFORMED)


def test_credential_wire_layout(fid, keys):
    cred = issue_credential(fid, keys.at_epoch(3))
    data = cred.to_bytes()
    assert len(data) == 32 + 8 + 4
    assert data[:32] == cred.efid.data
    assert data[-4:] == b"\x00\x00\x00\x03"
    assert Credential.from_bytes(data, 256) == cred
    with pytest.raises(CredentialFormatError):
        Credential.from_bytes(data[:-1], 256)


def test_master_keys_validation():
    with pytest.raises(ParameterError):
        MasterKeys(b"\x00" * 15, b"\x00" * 16)
    with pytest.raises(ParameterError):
        MasterKeys(b"\x00" * 16, b"\x00" * 16, hash_bits=24)
    with pytest.raises(ParameterError):
        MasterKeys(b"\x00" * 16, b"\x00" * 16, epoch=-1)
    assert MasterKeys.from_seed(4) == MasterKeys.from_seed(4)
    assert MasterKeys.generate().k1 != MasterKeys.generate().k1


def test_random_credentials_never_pass_64_bit_check(keys):
    rng = stream(9, "forge")
    accepted = sum(
        isinstance(security_check(random_credential(rng, 256, keys), keys), Accept)
        for _ in range(10_000)
    )
    assert accepted == 0


def test_keys_differ_per_seed():
    a, b = MasterKeys.from_seed(1), MasterKeys.from_seed(2)
    fid = ForwardingId(0b11111, FilterParams().m)
    assert encrypt_fid(fid, a.k1) != encrypt_fid(fid, b.k1)


def _random_fids(count: int, seed: int, m: int = 256):
    return [ForwardingId(bits, m) for bits in random_fid_bits(m, 0.5, stream(seed, "fids"), count)]


def _bits_differ(a: bytes, b: bytes) -> int:
    return (int.from_bytes(a, "big") ^ int.from_bytes(b, "big")).bit_count()


def test_round_trip_on_random_filters(keys):
    for fid in _random_fids(10_000, seed=1):
        assert decrypt_fid(encrypt_fid(fid, keys.k1), keys.k1) == fid


def test_wrong_k1_does_not_recover_the_filter(keys):
    other = MasterKeys.from_seed(1)
    for fid in _random_fids(10_000, seed=2):
        assert decrypt_fid(encrypt_fid(fid, keys.k1), other.k1) != fid


def test_single_bit_flip_scrambles_the_first_block(keys):
    rng = stream(3, "flips")
    changed = []
    for fid in _random_fids(1_000, seed=3):
        flipped = ForwardingId(fid.bits ^ (1 << int(rng.integers(fid.m))), fid.m)
        a = encrypt_fid(fid, keys.k1).data[:16]
        b = encrypt_fid(flipped, keys.k1).data[:16]
        changed.append(_bits_differ(a, b))
    assert abs(np.mean(changed) - 64) <= 5


def test_filters_sharing_a_first_block_encrypt_apart(params, keys):
    base = ForwardingId(0b11111, params.m)
    tail = ForwardingId(base.bits | 1 << 200, params.m)
    a, b = encrypt_fid(base, keys.k1).data, encrypt_fid(tail, keys.k1).data
    assert a[:16] != b[:16]
    assert a[16:] != b[16:]


def test_every_single_bit_flip_is_rejected_on_many_credentials(keys):
    for fid in _random_fids(100, seed=4):
        cred = issue_credential(fid, keys)
        for index in range(fid.m + 64):
            assert security_check(cred.flip_bit(index), keys) == Reject(RejectReason.BAD_TAG), index


def _tag_collisions(count: int, keys: MasterKeys) -> int:
    rng = stream(6, "tags")
    tags = {compute_tag(EncryptedFid(rng.bytes(32)), keys.k2).value for _ in range(count)}
    return count - len(tags)


def test_no_tag_collisions(keys):
    assert _tag_collisions(10_000, keys) == 0


@pytest.mark.slow
def test_no_tag_collisions_full_size(keys):
    assert _tag_collisions(100_000, keys) == 0


def test_tags_under_neighbouring_keys_are_independent(keys):
    near = bytes([keys.k2[0] ^ 1]) + keys.k2[1:]
    rng = stream(7, "tag-keys")
    agree = []
    for _ in range(1_000):
        efid = EncryptedFid(rng.bytes(32))
        diff = compute_tag(efid, keys.k2).value ^ compute_tag(efid, near).value
        agree.append(64 - diff.bit_count())
    assert abs(np.mean(agree) - 32) <= 1
