#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "doctest.h"
#include "qcm/protocol.hpp"
#include "qcm/serialize.hpp"
#include "qcm/stats.hpp"

using namespace qcm;

namespace {

ProtocolParams base_params() {
    ProtocolParams p;
    p.seed = 11;
    return p;
}

int count_checks(const Transcript& t, DecoyCheck want) {
    int n = 0;
    for (const RoundRecord& r : t.rounds) {
        if (r.decoy_check == want) ++n;
    }
    return n;
}

Transcript run_for(const ProtocolParams& p, AdversaryStrategy& eve) {
    if (p.k == 0) return run_single_party(p, eve);
    if (p.k == 1) return run_two_party(p, eve);
    return run_multi_party(p, eve);
}

// Records every transit handle and classical message a run produces, acting
// as a no-op on the probes themselves.
class Recorder final : public AdversaryStrategy {
public:
    struct Transit {
        Leg leg;
        int round, probe, probes_in_state, charlie_probes;
        bool last;
    };
    std::vector<Transit> transits;
    std::vector<std::string> message_kinds;
    int families = 0;

    void begin_run(int decoy_families) override { families = decoy_families; }

    std::vector<TamperRecord> on_probe_transit(TransitContext& ctx, Rng&) override {
        transits.push_back({ctx.leg, ctx.round, ctx.probe, ctx.probes_in_state,
                            ctx.charlie_probes, ctx.last_transit_of_round});
        CHECK(ctx.state != nullptr);
        CHECK(ctx.spectrum != nullptr);
        CHECK(ctx.state->n == ctx.probes_in_state);
        return {};
    }

    void on_classical_message(const Message& msg) override {
        message_kinds.push_back(msg.kind);
    }
};

}  // namespace

TEST_CASE("parameter validation rejects out-of-range settings") {
    auto bad = [](auto&& tweak) {
        ProtocolParams p;
        tweak(p);
        CHECK_THROWS_AS(validate(p), std::invalid_argument);
    };
    bad([](ProtocolParams& p) { p.N = 0; });
    bad([](ProtocolParams& p) { p.k = -1; });
    bad([](ProtocolParams& p) { p.P_a = 0; });
    bad([](ProtocolParams& p) { p.P_a = 1; });
    bad([](ProtocolParams& p) { p.P_c = 1; });
    bad([](ProtocolParams& p) { p.nu = 0; });
    bad([](ProtocolParams& p) { p.abort_threshold = 0; });
    bad([](ProtocolParams& p) { p.quadrature_fraction = 1.5; });
    bad([](ProtocolParams& p) { p.quadrature_fraction = 0.5; p.k = 1; });
    bad([](ProtocolParams& p) { p.extended_decoys = true; p.k = 1; });
    bad([](ProtocolParams& p) { p.preshared_basis_key = true; });
    bad([](ProtocolParams& p) { p.N = 13; });
    bad([](ProtocolParams& p) { p.k = 2; p.key_length = 4; });
    bad([](ProtocolParams& p) { p.k = 2; p.N = 12; });  // 13 probes total

    // The class/check balance constraint P_a(2 - P_c) = 1 can be opted out.
    ProtocolParams p;
    p.P_a = 0.5;
    CHECK_THROWS_AS(validate(p), std::invalid_argument);
    p.balanced_decoys = false;
    CHECK_NOTHROW(validate(p));

    CHECK(eta_for(2.0 / 3.0, 0.5) == doctest::Approx(0.5).epsilon(1e-12));
}

TEST_CASE("verify_decoy frozen examples") {
    RoundRecord rec;
    SUBCASE("energy preparations must echo their bit") {
        rec.bases = {"energy"};
        rec.outcomes = {"111"};
        CHECK(verify_decoy(rec, {PrepKind::Energy1, false, 0, false}) == DecoyCheck::Pass);
        rec.outcomes = {"101"};
        CHECK(verify_decoy(rec, {PrepKind::Energy1, false, 0, false}) == DecoyCheck::Fail);
        rec.outcomes = {"000"};
        CHECK(verify_decoy(rec, {PrepKind::Energy0, false, 0, false}) == DecoyCheck::Pass);
        rec.bases = {"ghz_real"};
        rec.outcomes = {"plus"};
        CHECK(verify_decoy(rec, {PrepKind::Energy0, false, 0, false}) ==
              DecoyCheck::NotADecoy);
    }
    SUBCASE("NOON parity under the check unitary") {
        rec.bases = {"ghz_real"};
        rec.outcomes = {"minus"};
        // sign +1 flipped by odd m.
        CHECK(verify_decoy(rec, {PrepKind::NoonPlus, true, 3, false}) == DecoyCheck::Pass);
        CHECK(verify_decoy(rec, {PrepKind::NoonPlus, true, 2, false}) == DecoyCheck::Fail);
        rec.outcomes = {"invalid"};
        CHECK(verify_decoy(rec, {PrepKind::NoonPlus, true, 3, false}) == DecoyCheck::Fail);
        rec.outcomes = {"minus"};
        CHECK(verify_decoy(rec, {PrepKind::NoonPlus, false, 3, false}) ==
              DecoyCheck::NotADecoy);
        CHECK(verify_decoy(rec, {PrepKind::NoonPlus, true, 3, true}) ==
              DecoyCheck::NotADecoy);
    }
    SUBCASE("imaginary family is verified against its own readout") {
        rec.bases = {"ghz_imag"};
        rec.outcomes = {"plus"};
        // sign -1 flipped by odd m gives +1.
        CHECK(verify_decoy(rec, {PrepKind::NoonMinusI, true, 1, false}) == DecoyCheck::Pass);
        CHECK(verify_decoy(rec, {PrepKind::NoonPlusI, true, 1, false}) == DecoyCheck::Fail);
    }
    SUBCASE("product shares multiply to the parity") {
        rec.bases = {"x_product", "x", "x"};
        rec.outcomes = {"plus", "minus", "minus"};
        CHECK(verify_decoy(rec, {PrepKind::NoonPlus, true, 0, false}) == DecoyCheck::Pass);
        rec.outcomes = {"plus", "plus", "minus"};
        CHECK(verify_decoy(rec, {PrepKind::NoonPlus, true, 0, false}) == DecoyCheck::Fail);
    }
    SUBCASE("shape errors throw") {
        rec.bases = {"energy"};
        rec.outcomes = {};
        CHECK_THROWS_AS(verify_decoy(rec, {PrepKind::Energy0, false, 0, false}),
                        std::invalid_argument);
    }
}

TEST_CASE("passive runs complete cleanly across schemes") {
    struct Grid {
        int N, k;
    };
    for (const Grid g : {Grid{3, 0}, Grid{4, 1}, Grid{2, 2}, Grid{4, 3}}) {
        CAPTURE(g.N);
        CAPTURE(g.k);
        ProtocolParams p = base_params();
        p.N = g.N;
        p.k = g.k;
        p.nu = 300;
        p.phi_true = 0.37;
        auto eve = passive();
        const Transcript t = run_for(p, *eve);

        CHECK_FALSE(t.aborted);
        CHECK_FALSE(t.probe_count_violation);
        CHECK(t.abort_round == -1);
        CHECK(static_cast<int>(t.rounds.size()) == p.nu);
        CHECK(count_checks(t, DecoyCheck::Fail) == 0);
        CHECK(count_checks(t, DecoyCheck::Pass) > 0);
        for (const RoundRecord& r : t.rounds) CHECK(r.adversary_events.empty());

        // Retention: every NOON phase round for the single party, the sifted
        // ones for the multi-party schemes; usable rounds are the whole
        // retained list (k = 0) or its even positions (sign-revealed half).
        std::vector<int> expect_retained;
        for (const RoundRecord& r : t.rounds) {
            const bool sifted = g.k == 0 || r.sift_kept;
            if (prep_is_noon(r.prep) && r.charlie.applied_phase && sifted) {
                expect_retained.push_back(r.index);
            }
        }
        CHECK(t.retained_for_estimation == expect_retained);
        for (std::size_t pos = 0; pos < t.retained_for_estimation.size(); ++pos) {
            const RoundRecord& r =
                t.rounds[static_cast<std::size_t>(t.retained_for_estimation[pos])];
            const bool want_usable = g.k == 0 || pos % 2 == 0;
            CHECK(r.usable_for_estimation == want_usable);
        }
        for (const RoundRecord& r : t.rounds) {
            if (r.usable_for_estimation) {
                CHECK(prep_is_noon(r.prep));
                CHECK(r.charlie.applied_phase);
            }
        }
    }
}

TEST_CASE("identical parameters reproduce identical transcripts") {
    ProtocolParams p = base_params();
    p.nu = 120;
    p.phi_true = 1.1;
    auto e1 = passive();
    auto e2 = passive();
    const std::string a = canonical_dump(transcript_to_json(run_single_party(p, *e1)));
    const std::string b = canonical_dump(transcript_to_json(run_single_party(p, *e2)));
    CHECK(a == b);

    p.k = 2;
    p.N = 3;
    p.key_length = 16;
    auto e3 = passive();
    auto e4 = passive();
    const std::string c = canonical_dump(transcript_to_json(run_multi_party(p, *e3)));
    const std::string d = canonical_dump(transcript_to_json(run_multi_party(p, *e4)));
    CHECK(c == d);
    CHECK(a != c);
}

TEST_CASE("transit sequence seen by the adversary") {
    SUBCASE("single party: N round trips, last return flagged") {
        ProtocolParams p = base_params();
        p.N = 3;
        p.nu = 2;
        Recorder rec;
        run_single_party(p, rec);
        CHECK(rec.families == 2);
        REQUIRE(rec.transits.size() == 2u * 3u * 2u);
        for (int r = 0; r < 2; ++r) {
            for (int probe = 0; probe < 3; ++probe) {
                const auto& out = rec.transits[static_cast<std::size_t>(r * 6 + 2 * probe)];
                const auto& back =
                    rec.transits[static_cast<std::size_t>(r * 6 + 2 * probe + 1)];
                CHECK(out.leg == Leg::ToCharlie);
                CHECK(back.leg == Leg::FromCharlie);
                CHECK(out.round == r);
                CHECK(back.round == r);
                CHECK(out.probe == probe);
                CHECK(back.probe == probe);
                CHECK(out.probes_in_state == 3);
                CHECK(out.charlie_probes == 3);
                CHECK_FALSE(out.last);
                CHECK(back.last == (probe == 2));
            }
        }
        const std::vector<std::string> want{"check_disclosure", "phase_m_disclosure"};
        CHECK(rec.message_kinds == want);
    }
    SUBCASE("extended decoys announce three families") {
        ProtocolParams p = base_params();
        p.extended_decoys = true;
        p.nu = 1;
        Recorder rec;
        run_single_party(p, rec);
        CHECK(rec.families == 3);
    }
    SUBCASE("multi party: direct shares travel once, no return leg") {
        ProtocolParams p = base_params();
        p.N = 2;
        p.k = 2;
        p.nu = 2;
        p.key_length = 16;
        Recorder rec;
        run_multi_party(p, rec);
        // Per round: 2 round trips through Charlie plus one direct send.
        REQUIRE(rec.transits.size() == 2u * 5u);
        for (int r = 0; r < 2; ++r) {
            const std::size_t o = static_cast<std::size_t>(5 * r);
            CHECK(rec.transits[o].leg == Leg::ToCharlie);
            CHECK(rec.transits[o + 1].leg == Leg::FromCharlie);
            CHECK(rec.transits[o + 2].leg == Leg::ToCharlie);
            CHECK(rec.transits[o + 3].leg == Leg::FromCharlie);
            CHECK(rec.transits[o + 4].leg == Leg::ToCharlie);
            CHECK(rec.transits[o + 4].probe == 2);
            CHECK(rec.transits[o + 4].last);
            for (std::size_t i = 0; i < 4; ++i) CHECK_FALSE(rec.transits[o + i].last);
            for (std::size_t i = 0; i < 5; ++i) {
                CHECK(rec.transits[o + i].probes_in_state == 3);
                CHECK(rec.transits[o + i].charlie_probes == 2);
            }
        }
        const std::vector<std::string> want{
            "key_flip_list",      "energy_bits",        "check_disclosure",
            "check_m_disclosure", "check_signs",        "phase_m_disclosure",
            "sign_reveal",        "outcome_reveal"};
        CHECK(rec.message_kinds == want);
    }
}

TEST_CASE("class draw frequencies match the configured mixture") {
    ProtocolParams p = base_params();
    p.nu = 6000;
    p.extended_decoys = true;
    auto eve = passive();
    const Transcript t = run_single_party(p, *eve);
    long long noon = 0;
    std::vector<long long> decoys(4, 0);
    for (const RoundRecord& r : t.rounds) {
        switch (r.prep) {
            case PrepKind::NoonPlus:
            case PrepKind::NoonMinus: ++noon; break;
            case PrepKind::Energy0: ++decoys[0]; break;
            case PrepKind::Energy1: ++decoys[1]; break;
            case PrepKind::NoonPlusI: ++decoys[2]; break;
            case PrepKind::NoonMinusI: ++decoys[3]; break;
        }
    }
    CHECK(std::abs(binomial_z(noon, p.nu, p.P_a)) < 4.0);
    for (long long c : decoys) {
        CHECK(std::abs(binomial_z(c, p.nu, (1 - p.P_a) / 4)) < 4.0);
    }
}

TEST_CASE("check multiplier m is uniform over its range") {
    ProtocolParams p = base_params();
    p.N = 5;
    p.nu = 5000;
    auto eve = passive();
    const Transcript t = run_single_party(p, *eve);
    std::vector<long long> counts(5, 0);
    for (const RoundRecord& r : t.rounds) {
        REQUIRE(r.charlie.m >= 0);
        REQUIRE(r.charlie.m < 5);
        ++counts[static_cast<std::size_t>(r.charlie.m)];
    }
    CHECK(chi_square_uniform_pvalue(counts) > 1e-3);
}

TEST_CASE("two-party sifting keeps matching bases at rate eta-balance") {
    ProtocolParams p = base_params();
    p.k = 1;
    p.nu = 4000;
    auto eve = passive();
    const Transcript t = run_two_party(p, *eve);
    long long kept = 0;
    for (const RoundRecord& r : t.rounds) {
        REQUIRE(r.bases.size() == 1);
        const bool match = (prep_is_noon(r.prep) && r.bases[0] == "ghz_real") ||
                           (prep_is_energy(r.prep) && r.bases[0] == "energy");
        CHECK(r.sift_kept == match);
        if (r.sift_kept) ++kept;
    }
    // P_a eta + (1 - P_a)(1 - eta) with eta = 1/2 at the reference point.
    const double eta = eta_for(p.P_a, p.P_c);
    const double rate = p.P_a * eta + (1 - p.P_a) * (1 - eta);
    CHECK(rate == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(std::abs(binomial_z(kept, p.nu, rate)) < 4.0);
}

TEST_CASE("preshared basis key removes sifting losses") {
    ProtocolParams p = base_params();
    p.k = 1;
    p.preshared_basis_key = true;
    p.nu = 500;
    auto eve = passive();
    const Transcript t = run_two_party(p, *eve);
    CHECK_FALSE(t.aborted);
    for (const RoundRecord& r : t.rounds) CHECK(r.sift_kept);
}

TEST_CASE("multi-party run distributes keys and mixes classes") {
    ProtocolParams p = base_params();
    p.N = 2;
    p.k = 3;
    p.nu = 3000;
    p.key_length = 32;
    auto eve = passive();
    const Transcript t = run_multi_party(p, *eve);
    CHECK_FALSE(t.aborted);

    int flip_lists = 0;
    for (const Message& m : t.reveal_log) {
        if (m.kind == "key_flip_list") ++flip_lists;
    }
    CHECK(flip_lists == p.k - 1);

    long long noon = 0;
    for (const RoundRecord& r : t.rounds) {
        CHECK(r.sift_kept);
        CHECK(r.bases.size() == static_cast<std::size_t>(p.k));
        if (prep_is_noon(r.prep)) ++noon;
    }
    CHECK(std::abs(binomial_z(noon, p.nu, p.P_a)) < 4.0);
}

TEST_CASE("deterministic phase tampering aborts before the phase reveal") {
    ProtocolParams p = base_params();
    p.nu = 200;
    p.phi_true = 0.9;
    auto eve = phase_bias(M_PI);
    const Transcript t = run_single_party(p, *eve);

    REQUIRE(t.aborted);
    CHECK_FALSE(t.probe_count_violation);
    // First NOON check round is the first failure; energy rounds only pick
    // up a global phase and still verify.
    int first_noon_check = -1;
    for (const RoundRecord& r : t.rounds) {
        if (prep_is_energy(r.prep)) CHECK(r.decoy_check != DecoyCheck::Fail);
        if (first_noon_check < 0 && prep_is_noon(r.prep) && !r.charlie.applied_phase) {
            first_noon_check = r.index;
        }
    }
    REQUIRE(first_noon_check >= 0);
    CHECK(t.abort_round == first_noon_check);
    CHECK(t.retained_for_estimation.empty());
    bool saw_abort = false;
    for (const Message& m : t.reveal_log) {
        CHECK(m.kind != "phase_m_disclosure");
        if (m.kind == "abort") saw_abort = true;
    }
    CHECK(saw_abort);
}

TEST_CASE("abort threshold tolerates failures below the limit") {
    ProtocolParams p = base_params();
    p.nu = 200;
    p.abort_threshold = 3;
    auto eve = phase_bias(M_PI);
    const Transcript t = run_single_party(p, *eve);

    REQUIRE(t.aborted);
    std::vector<int> noon_checks;
    for (const RoundRecord& r : t.rounds) {
        if (prep_is_noon(r.prep) && !r.charlie.applied_phase &&
            r.decoy_check == DecoyCheck::Fail) {
            noon_checks.push_back(r.index);
        }
    }
    REQUIRE(noon_checks.size() == 3);
    CHECK(t.abort_round == noon_checks[2]);
}

TEST_CASE("probe injection is always detected") {
    ProtocolParams p = base_params();
    p.nu = 5;
    SUBCASE("single party") {
        auto eve = probe_injector(1);
        const Transcript t = run_single_party(p, *eve);
        REQUIRE(t.aborted);
        CHECK(t.probe_count_violation);
        CHECK(t.abort_round == 0);
        REQUIRE(t.rounds.size() == 1);
        REQUIRE_FALSE(t.rounds[0].messages.empty());
        CHECK(t.rounds[0].messages[0].kind == "probe_count_violation");
    }
    SUBCASE("multi party") {
        p.N = 2;
        p.k = 2;
        p.key_length = 16;
        auto eve = probe_injector(2);
        const Transcript t = run_multi_party(p, *eve);
        REQUIRE(t.aborted);
        CHECK(t.probe_count_violation);
        CHECK(t.abort_round == 0);
    }
}

TEST_CASE("key exchange statistics with and without interception") {
    SUBCASE("clean channel: zero observed error, half the qubits sift") {
        Rng rng(123, stream::kBb84);
        const Bb84Stats s = bb84_exchange(2000, nullptr, rng);
        CHECK(s.qber == 0.0);
        CHECK(s.sample_errors == 0);
        CHECK(std::abs(binomial_z(s.sifted, s.qubits, 0.5)) < 4.0);
    }
    SUBCASE("intercept-resend: quarter error rate on sifted sample") {
        Rng rng(456, stream::kBb84);
        auto eve = basis_guess_intercept_resend();
        const Bb84Stats s = bb84_exchange(4000, eve.get(), rng);
        CHECK(std::abs(binomial_z(s.sifted, s.qubits, 0.5)) < 4.0);
        CHECK(std::abs(binomial_z(s.sample_errors, s.sampled, 0.25)) < 4.0);
    }
    SUBCASE("keygen aborts under interception, succeeds without") {
        Rng clean(7, stream::kBb84);
        const PartyKey good = bb84_keygen(256, clean);
        CHECK_FALSE(good.aborted);
        CHECK(good.bits.size() == 256);
        CHECK(good.sampled_qber == 0.0);

        Rng tapped(8, stream::kBb84);
        auto eve = basis_guess_intercept_resend();
        const PartyKey bad = bb84_keygen(256, tapped, eve.get());
        CHECK(bad.aborted);
        CHECK(bad.sampled_qber > 0.11);
    }
}

TEST_CASE("align_keys records the flip positions against the reference") {
    PartyKey a, b;
    a.bits = {1, 0, 1, 0};
    b.bits = {1, 1, 0, 0};
    const std::vector<PartyKey> out = align_keys({a, b});
    CHECK(out[0].flips_applied.empty());
    CHECK(out[1].flips_applied == std::vector<int>{1, 2});
    CHECK(out[1].bits == a.bits);

    PartyKey short_key;
    short_key.bits = {1, 0};
    CHECK_THROWS_AS(align_keys({a, short_key}), std::invalid_argument);
    CHECK_THROWS_AS(align_keys({a}), std::invalid_argument);
}

TEST_CASE("transcript JSON round-trips exactly") {
    ProtocolParams p = base_params();
    p.N = 3;
    p.k = 2;
    p.nu = 40;
    p.key_length = 16;
    p.phi_true = 0.6;
    auto eve = passive();
    const Transcript t = run_multi_party(p, *eve);
    const nlohmann::json j = transcript_to_json(t);
    const Transcript back = transcript_from_json(j);
    CHECK(canonical_dump(transcript_to_json(back)) == canonical_dump(j));

    nlohmann::json wrong = j;
    wrong["schema"] = "something-else";
    CHECK_THROWS_AS(transcript_from_json(wrong), std::invalid_argument);
}

TEST_CASE("small transcript matches the golden file") {
    ProtocolParams p;
    p.N = 2;
    p.nu = 6;
    p.seed = 7;
    p.phi_true = 0.25;
    auto eve = passive();
    const std::string rendered = canonical_dump(transcript_to_json(run_single_party(p, *eve)));

    const char* src = std::getenv("QCM_SOURCE_DIR");
    REQUIRE_MESSAGE(src != nullptr, "QCM_SOURCE_DIR must point at the repository root");
    const std::string path = std::string(src) + "/tests/golden/transcript_small.json";

    if (std::getenv("QCM_REGEN_GOLDEN") != nullptr) {
        std::ofstream out(path, std::ios::binary);
        REQUIRE(out.good());
        out << rendered;
        return;
    }
    std::ifstream in(path, std::ios::binary);
    REQUIRE_MESSAGE(in.good(), "golden file missing; rerun with QCM_REGEN_GOLDEN=1");
    std::stringstream buf;
    buf << in.rdbuf();
    CHECK(buf.str() == rendered);
}
