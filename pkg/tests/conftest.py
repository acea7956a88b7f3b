import numpy as np
import pytest

from hashguard.pipeline import (
    PipelineConfig,
    build_database,
    calibrate_pipeline,
    make_dataset,
    standard_attacks,
    standard_records,
    train_pipeline_net,
)


@pytest.fixture(scope="session")
def cfg():
    return PipelineConfig()


@pytest.fixture(scope="session")
def dataset(cfg):
    return make_dataset(cfg)


@pytest.fixture(scope="session")
def train_result(cfg, dataset):
    return train_pipeline_net(cfg, dataset)


@pytest.fixture(scope="session")
def net(train_result):
    return train_result.net


@pytest.fixture(scope="session")
def db(cfg, dataset, net):
    return build_database(cfg, dataset, net)


@pytest.fixture(scope="session")
def state(cfg, dataset, net, db):
    return calibrate_pipeline(cfg, db, dataset, net)


@pytest.fixture(scope="session")
def attack_batches(cfg, dataset, net, db):
    return standard_attacks(cfg, dataset, net, db)


@pytest.fixture(scope="session")
def records(cfg, dataset, net, db, state, attack_batches):
    benign, attacks = standard_records(cfg, dataset, net, db, state, attack_batches)
    return {"benign": benign, **attacks}


@pytest.fixture(scope="session")
def rng():
    return np.random.default_rng(1234)
