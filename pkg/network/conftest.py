import pytest

from network import NetDescriptor, NetworkWeights


@pytest.fixture
def small_descriptor():
    return NetDescriptor(n_erb=8, nb_df=6, df_order=3, conv_ch=4, groups=2, emb_dim=8)


@pytest.fixture
def small_weights(small_descriptor):
    return NetworkWeights.init_random(small_descriptor, seed=7)
