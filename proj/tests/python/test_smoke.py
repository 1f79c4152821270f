import math

import pytest

import ragmarl


def test_answer_metrics():
    m = ragmarl.answer_metrics("yankee conference", "north atlantic conference")
    assert m.f1 == pytest.approx(0.4, abs=1e-12)
    assert m.em == 0.0
    m = ragmarl.answer_metrics("the answer is paris", "Paris")
    assert (m.acc, m.em) == (1.0, 0.0)
    assert m.f1 == pytest.approx(0.5, abs=1e-12)
    assert ragmarl.normalize_answer("The North Atlantic!") == ["north", "atlantic"]


def test_rewards():
    assert ragmarl.penalty_qr(5) == -0.5
    assert ragmarl.penalty_qr(4) == 0.0
    assert ragmarl.penalty_g(33, 32) == -0.5
    r = ragmarl.assemble_terminal_reward(0.4, 0.0, 0.1, 0.3)
    assert r.r_total == pytest.approx(0.37, abs=1e-12)


def test_gae_and_losses():
    a = ragmarl.compute_gae([0.0, 0.0, 1.0], [0.5, 0.2, 0.1], gamma=1.0, lam=0.95)
    assert a == pytest.approx([0.41725, 0.755, 0.9], abs=1e-12)
    assert ragmarl.actor_objective([math.log(1.5)], [0.0], [1.0]) == pytest.approx(1.2)
    assert ragmarl.critic_loss([0.9], [0.5], [1.0]) == pytest.approx(0.09)
    assert ragmarl.total_loss(1.0, 2.0) == pytest.approx(-0.8)
    assert ragmarl.beta_schedule(5, 10) == pytest.approx(0.13)
    with pytest.raises(ragmarl.ConfigError):
        ragmarl.compute_gae([1.0], [0.0], lam=2.0)
    with pytest.raises(ragmarl.Error):
        ragmarl.compute_gae([1.0, 2.0], [0.0])


def test_world_roundtrip_and_retrieval(tmp_path):
    w = ragmarl.build_world(entity_count=30, train_size=40, dev_size=10, test_size=10, seed=3)
    assert len(w.instances("train")) == 40
    qa = w.instances("dev")[0]
    assert qa["hops"] in (1, 2)
    assert len(qa["sub_questions"]) == qa["hops"]

    text = w.serialize()
    assert ragmarl.parse_world(text).serialize() == text
    w.save(tmp_path / "w.txt")
    assert ragmarl.load_world(tmp_path / "w.txt").serialize() == text

    index = ragmarl.Bm25Index(w)
    ids = index.retrieve(qa["sub_questions"][0], k=10)
    assert len(ids) == 10
    assert len(set(ids)) == 10
    assert qa["support"][0] in ids


def test_bad_world_config():
    with pytest.raises(ragmarl.ConfigError, match="bogus"):
        ragmarl.build_world(bogus=1)
