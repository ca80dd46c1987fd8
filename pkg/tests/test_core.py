import random

import pytest

from geobft.core import (
    BoundCrypto,
    ClientId,
    ConfigurationError,
    CryptoProvider,
    FaultParams,
    GroupKey,
    ReplicaId,
    canonical_decode,
    canonical_encode,
)
from geobft.core.messages import (
    ChMove,
    ChSend,
    ChannelId,
    Execute,
    FullReq,
    Placeholder,
    Result,
    Write,
)


def test_fault_params_sizes():
    fp = FaultParams(1, 1)
    assert fp.agreement_size == 4
    assert fp.execution_size == 3
    assert fp.request_channel() == (1, 1)
    fp2 = FaultParams(2, 1)
    assert fp2.agreement_size == 7
    assert fp2.request_channel() == (1, 2)
    assert fp2.commit_channel() == (2, 1)


def test_encode_roundtrip_identity():
    w = Write(b"put k v", ClientId(1), 1)
    raw = canonical_encode(w)
    assert canonical_decode(raw) == w


def test_encode_injective_on_counter():
    a = Write(b"put k v", ClientId(1), 1)
    b = Write(b"put k v", ClientId(1), 2)
    assert canonical_encode(a) != canonical_encode(b)


def test_encode_deterministic():
    r = FullReq(Write(b"x", ClientId(2), 5), _sig(), 1)
    e = Execute(5, (r,))
    assert canonical_encode(e) == canonical_encode(Execute(5, (r,)))


def _sig():
    provider = CryptoProvider()
    c = ClientId(2)
    provider.register_principal(c)
    return provider.sign(c, b"x")


def _random_message(rng):
    kind = rng.randrange(5)
    c = ClientId(rng.randrange(10))
    if kind == 0:
        return Write(bytes(rng.randrange(256) for _ in range(rng.randrange(20))),
                     c, rng.randrange(1 << 32), rng.random() < 0.5)
    if kind == 1:
        return ChSend(ChannelId("req", rng.randrange(5)), rng.randrange(100),
                      rng.randrange(1, 1000), b"m" * rng.randrange(5))
    if kind == 2:
        return ChMove(ChannelId("commit", 1), 0, rng.randrange(1, 500),
                      rng.choice((None, rng.randrange(4))),
                      rng.choice((None, rng.randrange(100))))
    if kind == 3:
        return Result(c, rng.randrange(100), b"r" * rng.randrange(8),
                      rng.random() < 0.5, rng.random() < 0.1)
    return Execute(rng.randrange(1000),
                   (Placeholder(c, rng.randrange(50)),) * rng.randrange(3))


def test_encoding_canonical_over_random_messages():
    rng = random.Random(7)
    seen = {}
    for _ in range(1000):
        msg = _random_message(rng)
        raw = canonical_encode(msg)
        assert canonical_encode(msg) == raw
        assert canonical_decode(raw) == msg
        if raw in seen:
            assert seen[raw] == msg
        seen[raw] = msg


class TestCrypto:
    def setup_method(self):
        self.provider = CryptoProvider()
        self.group = GroupKey("ex", 1)
        self.members = [ReplicaId("ex", 1, i) for i in range(3)]
        self.provider.register_group(self.group, self.members)
        self.client = ClientId(0)
        self.provider.register_principal(self.client)

    def test_sign_verify_in_group(self):
        msg = Write(b"op", self.client, 1)
        sig = self.provider.sign(self.members[0], msg)
        assert self.provider.valid_sig(msg, sig, self.group)

    def test_tampered_payload_fails(self):
        msg = Write(b"op", self.client, 1)
        sig = self.provider.sign(self.members[0], msg)
        tampered = Write(b"oq", self.client, 1)
        assert not self.provider.valid_sig(tampered, sig, self.group)

    def test_wrong_principal_fails(self):
        msg = Write(b"op", self.client, 1)
        sig = self.provider.sign(self.members[0], msg)
        assert not self.provider.valid_sig(msg, sig, self.members[1])

    def test_mac_vector_verified_by_all_group_members(self):
        msg = Write(b"op", self.client, 1)
        mac = self.provider.mac(self.client, self.group, msg)
        for member in self.members:
            assert self.provider.valid_mac(msg, mac, member)
        outsider = ReplicaId("ex", 2, 0)
        assert not self.provider.valid_mac(msg, mac, outsider)

    def test_unknown_principal_is_configuration_error(self):
        with pytest.raises(ConfigurationError):
            self.provider.sign(ClientId(99), b"x")

    def test_bound_crypto_pins_identity(self):
        bound = BoundCrypto(self.provider, self.members[0])
        sig = bound.sign(b"payload")
        assert sig.signer == self.members[0]
