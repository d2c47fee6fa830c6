import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from slime_po import SlimeAligner, check_pairs
from slime_po.prefdata import PreferencePair, generate_synthetic


@pytest.fixture(scope="module")
def data():
    pairs = generate_synthetic(300, 24, 8, seed=5)
    return pairs[:250], pairs[250:]


def test_get_set_params():
    est = SlimeAligner(p=3.0, objective="simpo")
    params = est.get_params()
    assert params["p"] == 3.0 and params["objective"] == "simpo" and params["lambda_w"] == 0.1
    est.set_params(kappa=1.5)
    assert clone(est).kappa == 1.5


def test_fit_predict_score(data):
    train, test = data
    est = SlimeAligner(embed_dim=8, epochs=3, lr_init=2e-2).fit(train)
    assert est.vocab_size_ == 24
    assert est.predict(test).shape == (50,)
    assert set(np.unique(est.predict(test))) <= {0, 1}
    assert est.score(test) > 0.8
    np.testing.assert_allclose(est.decision_function(test), est.transform(test) @ np.array([1.0, -1.0]))
    assert est.history_[0].step == 0


def test_not_fitted():
    with pytest.raises(NotFittedError):
        SlimeAligner().predict([{"prompt": [1], "chosen": [2], "rejected": [3]}])


def test_check_pairs_accepts_dicts():
    pairs = check_pairs([{"prompt": [1], "chosen": [2], "rejected": [3]}], vocab_size=4)
    assert isinstance(pairs[0], PreferencePair)
    with pytest.raises(ValueError):
        check_pairs([])
    with pytest.raises(TypeError):
        check_pairs("abc")
    with pytest.raises(TypeError):
        check_pairs([1, 2])
