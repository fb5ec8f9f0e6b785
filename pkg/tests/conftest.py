from __future__ import annotations

import pytest


@pytest.fixture(scope="session")
def planted():
    from molcpt.data import scaffold_split
    from molcpt.synthetic import planted_dataset

    ds = planted_dataset()
    scaffold_split(ds)
    return ds


@pytest.fixture(scope="session")
def planted_pretrained(planted):
    """Default-width contrastive pretraining (50 epochs) on the planted training split."""
    from molcpt.pipeline import RunConfig, pretrain_for

    return pretrain_for(planted, RunConfig())


@pytest.fixture(scope="session")
def tiny():
    """Small planted set with a narrow, briefly pretrained encoder for fast pipeline tests."""
    from molcpt.data import scaffold_split
    from molcpt.pipeline import RunConfig, pretrain_for
    from molcpt.synthetic import planted_dataset

    ds = planted_dataset(n=60, seed=1)
    scaffold_split(ds)
    base = RunConfig(dim=16, num_layers=2, heads=2, pretrain_epochs=3, epochs=4, t=3, tau_ans=10)
    pre = pretrain_for(ds, base)
    return ds, base, pre
