import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import crandn
from oracles import dense_circulant
from unfolded_doa.array_signal import build_dictionary, generate_dataset, make_sla, make_ula, stack_samples
from unfolded_doa.errors import ContractError, NearSingularLayer, StructureViolation
from unfolded_doa.nets import (
    ADMM_FAMILY, KINDS, apply_constraints, forward, forward_layer, init_network, param_count,
    per_layer_param_count, project_hermitian_circulant, soft_threshold_backward, toeplitz_dense,
    toeplitz_generator, toeplitz_matvec, toeplitz_tie,
)
from unfolded_doa.solvers import SolverConfig, fast_compact_admm, ista, soft_threshold
from unfolded_doa.training import grad_check, loss_and_grad
from unfolded_doa.verify import parent_output


class TestInit:
    def test_cadmm_layers(self):
        d = build_dictionary(make_ula(30), 256)
        net = init_network("cadmmnet", d, 30)
        assert net.t == 30
        for layer in net.layers:
            np.testing.assert_allclose(layer["w"], d.gram_col_dft)
            assert float(layer["beta"]) == 0.1 and float(layer["rho"]) == 1.0

    def test_lista_w2(self, ula16):
        net = init_network("lista", ula16, 2)
        np.testing.assert_allclose(net.layers[0]["W2"], ula16.mu * ula16.matrix_a.conj().T)
        np.testing.assert_allclose(net.layers[0]["W1"], np.eye(64) - ula16.mu * ula16.gram)

    def test_chadmm_start_satisfies_tie(self, ula16):
        w = init_network("chadmmnet", ula16, 1).layers[0]["w"]
        np.testing.assert_array_equal(w, project_hermitian_circulant(w))
        # the Gram column is already conjugate-symmetric
        np.testing.assert_allclose(w, ula16.gram_col, atol=1e-12)

    @pytest.mark.parametrize("kind", ["cadmmnet", "chadmmnet"])
    def test_circulant_kinds_need_half_wavelength(self, kind):
        d = build_dictionary(make_ula(4, gamma=0.25), 16)
        with pytest.raises(StructureViolation):
            init_network(kind, d, 2)

    def test_admmnet_works_off_half_wavelength(self):
        d = build_dictionary(make_ula(4, gamma=0.25), 16)
        x, _ = forward(init_network("admmnet", d, 2), np.ones(4), d)
        assert x.shape == (16,)

    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("geom", ["ula", "sla"])
    def test_reproduces_parent_method(self, kind, geom, rng):
        g = make_ula(12) if geom == "ula" else make_sla(12, 30, seed=2)
        d = build_dictionary(g, 48)
        net = init_network(kind, d, 8)
        y = crandn(rng, (3, 12))
        x, _ = forward(net, y, d)
        ref = parent_output(kind, d, y, 8)
        assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)


class TestCounts:
    @pytest.mark.parametrize("n,expect", [(17, (291, 19, 11)), (64, (4098, 66, 35)), (256, (65538, 258, 131))])
    def test_table(self, n, expect):
        got = tuple(per_layer_param_count(k, n, 8) for k in ("admmnet", "cadmmnet", "chadmmnet"))
        assert got == expect

    def test_ista_family(self):
        assert per_layer_param_count("lista", 64, 16) == 64 * 64 + 16 * 64 + 1
        assert per_layer_param_count("tlista", 64, 16) == 127 + 16 * 64 + 1
        assert per_layer_param_count("thlista", 64, 16) == 64 + 16 * 64 + 1

    def test_network_total(self, ula16):
        assert param_count(init_network("cadmmnet", ula16, 5)) == 5 * 66 + 1
        assert param_count(init_network("lista", ula16, 5)) == 5 * (64 * 64 + 16 * 64 + 1)

    @pytest.mark.parametrize("n", [17, 64])
    def test_chadmm_tied_entries_follow_free_ones(self, n, rng):
        # perturbing a tied entry is undone by the projection; free ones survive
        w = project_hermitian_circulant(crandn(rng, n))
        free = [i for i in range(n) if not np.array_equal(
            project_hermitian_circulant(w + np.eye(n)[i]), w)]
        assert free == list(range(n // 2 + 1))
        assert len(free) + 2 == per_layer_param_count("chadmmnet", n, 4)


class TestProjections:
    def test_four_entries(self):
        a, b, c, d = 1 + 2j, 3 + 4j, 5 + 6j, 7 + 8j
        np.testing.assert_array_equal(project_hermitian_circulant([a, b, c, d]), [a, b, c, np.conj(b)])

    @settings(max_examples=40, deadline=None)
    @given(n=st.integers(2, 40), seed=st.integers(0, 10**6), strict=st.booleans())
    def test_idempotent(self, n, seed, strict):
        w = crandn(np.random.default_rng(seed), n)
        once = project_hermitian_circulant(w, strict)
        np.testing.assert_array_equal(project_hermitian_circulant(once, strict), once)

    @pytest.mark.parametrize("n", [7, 256])
    def test_strict_circulant_is_hermitian(self, n, rng):
        c = dense_circulant(project_hermitian_circulant(crandn(rng, n), strict=True))
        np.testing.assert_allclose(c, c.conj().T, atol=0)

    @pytest.mark.parametrize("n", [8, 9, 256])
    def test_non_strict_residual_confined_to_free_entries(self, n, rng):
        w = project_hermitian_circulant(crandn(rng, n))
        c = dense_circulant(w)
        bad = np.argwhere(np.abs(c - c.conj().T) > 0)
        # only the diagonal (w[0]) and, for even N, the N/2 lag can be non-Hermitian
        lags = {int((i - j) % n) for i, j in bad}
        assert lags <= ({0, n // 2} if n % 2 == 0 else {0})

    def test_toeplitz_tie(self, ula16, rng):
        g = toeplitz_generator(ula16.gram)
        np.testing.assert_allclose(toeplitz_tie(g), g, atol=1e-13)
        w1 = np.zeros(7, complex)
        w1[3] = 1j
        assert toeplitz_tie(w1)[3] == 0
        t = toeplitz_dense(toeplitz_tie(crandn(rng, 31)))
        np.testing.assert_array_equal(t, t.conj().T)

    @settings(max_examples=25, deadline=None)
    @given(n=st.integers(1, 40), seed=st.integers(0, 10**6))
    def test_toeplitz_matvec(self, n, seed):
        rng = np.random.default_rng(seed)
        w1, x = crandn(rng, 2 * n - 1), crandn(rng, (2, n))
        t = toeplitz_dense(w1)
        np.testing.assert_allclose(toeplitz_matvec(w1, x), x @ t.T, atol=1e-10)
        np.testing.assert_array_equal(toeplitz_generator(t), w1)

    def test_apply_constraints(self, ula16):
        net = init_network("chadmmnet", ula16, 2)
        net.layers[0]["beta"][...] = -1
        net.layers[0]["rho"][...] = -1
        net.layers[1]["w"][40] = 99
        apply_constraints(net)
        assert float(net.layers[0]["beta"]) == 0 and float(net.layers[0]["rho"]) > 0
        assert net.layers[1]["w"][40] == np.conj(net.layers[1]["w"][24])


class TestForward:
    def test_cadmm_layer_is_one_fast_iteration(self, ula16, rng):
        y = crandn(rng, 16)
        net = init_network("cadmmnet", ula16, 1, beta0=0.3)
        u, _ = forward_layer("cadmmnet", net.layers[0], np.zeros(64, complex), ula16.backproject(y))
        _, trace = fast_compact_admm(ula16, y, SolverConfig(lam=0.3, rho=1.0, iterations=1), return_iterates=True)
        np.testing.assert_allclose(u, trace[0], atol=1e-12)

    def test_tlista_layer_is_one_ista_iteration(self, ula16, rng):
        y = crandn(rng, 16)
        net = init_network("tlista", ula16, 1)
        x, _ = forward(net, y, ula16)
        np.testing.assert_allclose(x, ista(ula16, y, SolverConfig(lam=0.1 / ula16.mu, iterations=1)), atol=1e-13)

    def test_cadmm_matches_fast_admm_t30(self):
        d = build_dictionary(make_ula(30), 256)
        y = crandn(np.random.default_rng(0), 30)
        x, _ = forward(init_network("cadmmnet", d, 30), y, d)
        ref = fast_compact_admm(d, y, SolverConfig(lam=0.1, rho=1.0, iterations=30))
        assert np.linalg.norm(x - ref) <= 1e-10 * np.linalg.norm(ref)

    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_input(self, kind, ula16):
        x, _ = forward(init_network(kind, ula16, 3), np.zeros((2, 16)), ula16)
        assert np.all(x == 0)

    def test_wrong_measurement_length(self, ula16):
        with pytest.raises(ContractError):
            forward(init_network("lista", ula16, 1), np.zeros(15), ula16)

    def test_dictionary_mismatch(self, ula16, sla16):
        with pytest.raises(ContractError):
            forward(init_network("cadmmnet", ula16, 1), np.zeros(16), sla16)

    def test_near_singular(self, ula16):
        net = init_network("cadmmnet", ula16, 1)
        net.layers[0]["w"][3] = -1.0
        with pytest.raises(NearSingularLayer):
            forward(net, np.ones(16), ula16)


class TestBackward:
    def test_soft_threshold_backward_matches_differences(self, rng):
        z, g = crandn(rng, 6), crandn(rng, 6)
        beta, eps = 0.7, 1e-7

        def f(zz, bb):
            return float(np.sum((np.conj(g) * soft_threshold(zz, bb)).real))

        gz, gb = soft_threshold_backward(z, beta, g)
        for i in range(6):
            for d in (1, 1j):
                dz = np.zeros(6, complex)
                dz[i] = eps * d
                num = (f(z + dz, beta) - f(z - dz, beta)) / (2 * eps)
                ana = gz[i].real if d == 1 else gz[i].imag
                assert ana == pytest.approx(num, abs=1e-6)
        assert gb == pytest.approx((f(z, beta + eps) - f(z, beta - eps)) / (2 * eps), abs=1e-6)

    @pytest.mark.parametrize("kind", KINDS)
    def test_gradients_match_differences(self, kind, small_dic):
        y, x = stack_samples(generate_dataset(small_dic, 2, (1, 3), 1 / 8, seed=3))
        net = init_network(kind, small_dic, 2)
        assert grad_check(net, y, x, small_dic, floor=1e-6) < 1e-4

    @pytest.mark.parametrize("kind", KINDS)
    def test_zero_input_gives_zero_matrix_gradients(self, kind, small_dic):
        _, x = stack_samples(generate_dataset(small_dic, 2, (1, 3), 1 / 8, seed=1))
        net = init_network(kind, small_dic, 2)
        loss, grads = loss_and_grad(net, np.zeros((2, 8)), x, small_dic)
        assert loss == pytest.approx(1.0)
        for name, g in grads.items():
            if name.split(".")[-1] in ("W", "w", "W1", "w1", "W2"):
                assert np.all(g == 0)

    @pytest.mark.parametrize("kind", ["cadmmnet", "lista"])
    def test_beta_gradient_positive_past_saturation(self, kind, small_dic):
        y, x = stack_samples(generate_dataset(small_dic, 2, (1, 3), 1 / 8, seed=2))
        net = init_network(kind, small_dic, 2)
        # push the last threshold to just below the largest magnitude it sees
        last = "final_beta" if kind in ADMM_FAMILY else f"{net.t - 1}.beta"
        p = net.named_parameters()[last]
        _, cache = forward(net, y, small_dic, want_cache=True)
        top = np.abs(cache["last"] if kind in ADMM_FAMILY else cache["layers"][-1]["z"]).max()
        p[...] = 0.9 * top
        _, grads = loss_and_grad(net, y, x, small_dic)
        assert grads[last] > 0


@settings(max_examples=25, deadline=None)
@given(n=st.integers(2, 64), seed=st.integers(0, 10**6))
def test_strict_projection_gives_real_spectrum(n, seed):
    w = project_hermitian_circulant(crandn(np.random.default_rng(seed), n), strict=True)
    spec = np.fft.fft(w)
    np.testing.assert_allclose(spec.imag, 0, atol=1e-9 * np.abs(spec).max())
