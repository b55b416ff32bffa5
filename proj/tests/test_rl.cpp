#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "koopctl/trainer.hpp"
#include "test_util.hpp"

using namespace koopctl;
using namespace koopctl::testing;

namespace {

Transition numbered(double k) {
  Transition t;
  t.x = Vector::Constant(3, k);
  t.u = Vector::Constant(1, -k);
  t.x_next = Vector::Constant(3, k + 0.5);
  t.r = k;
  t.d = 0.0;
  return t;
}

Config small_config() {
  Config cfg;
  cfg.latent_dim = 4;
  cfg.hidden_dim = 8;
  cfg.batch_size = 16;
  cfg.buffer_capacity = 1000;
  return cfg;
}

Agent small_agent(const Config& cfg, std::uint64_t seed = 1) {
  Rng rng(seed);
  Vector goal(3);
  goal << 1, 0, 0;
  return Agent(cfg, 3, 1, goal, rng);
}

TransitionBatch random_batch(Index n, Rng& rng) {
  ReplayBuffer buf(3, 1, n);
  for (Index i = 0; i < n; ++i) {
    Transition t;
    t.x = random_matrix(3, 1, rng).col(0);
    t.u = random_matrix(1, 1, rng, 0.5).col(0);
    t.x_next = random_matrix(3, 1, rng).col(0);
    t.r = uniform(rng, 0, 1);
    t.d = i % 7 == 0 ? 1.0 : 0.0;
    buf.push(t);
  }
  std::vector<Index> all(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) all[static_cast<std::size_t>(i)] = i;
  return buf.gather(all);
}

bool all_zero_grads(const std::vector<Tensor>& ts) {
  return std::all_of(ts.begin(), ts.end(), [](const Tensor& t) { return t.grad().isZero(0.0); });
}

bool any_nonzero_grad(const std::vector<Tensor>& ts) { return !all_zero_grads(ts); }

std::vector<Matrix> values_of(const std::vector<Tensor>& ts) {
  std::vector<Matrix> out;
  for (const auto& t : ts) out.push_back(t.value());
  return out;
}

std::vector<Tensor> every_parameter(const Agent& a) {
  std::vector<Tensor> all = a.encoder.query.parameters();
  for (const auto& t : a.encoder.key.parameters()) all.push_back(t);
  all.insert(all.end(), {a.encoder.similarity_w, a.koopman.a, a.koopman.b, a.lqr.q_raw, a.lqr.r_raw, a.log_std,
                         a.log_alpha});
  for (const auto& t : a.critic_parameters()) all.push_back(t);
  for (const auto& t : a.target_parameters()) all.push_back(t);
  return all;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("replay buffer push and FIFO overwrite") {
  ReplayBuffer buf(3, 1, 2);
  buf.push(numbered(1));
  CHECK(buf.size() == 1);
  buf.push(numbered(2));
  buf.push(numbered(3));
  CHECK(buf.size() == 2);
  std::vector<double> rs{buf.at(0).r, buf.at(1).r};
  std::sort(rs.begin(), rs.end());
  CHECK(rs == std::vector<double>{2, 3});

  Transition bad = numbered(1);
  bad.x(0) = NAN;
  CHECK_THROWS_AS(buf.push(bad), NumericError);
  bad = numbered(1);
  bad.d = 0.5;
  CHECK_THROWS_AS(buf.push(bad), NumericError);
}

TEST_CASE("replay buffer keeps every inserted transition") {
  const Index n = 100000;
  ReplayBuffer buf(3, 1, n);
  Rng rng(2);
  std::vector<double> inserted;
  for (Index i = 0; i < n; ++i) {
    const double k = std::floor(uniform(rng, 0, 5000));
    inserted.push_back(k);
    buf.push(numbered(k));
  }
  std::vector<double> stored;
  for (Index i = 0; i < buf.size(); ++i) {
    const Transition t = buf.at(i);
    CHECK(t.x_next(0) == t.r + 0.5);
    stored.push_back(t.r);
  }
  std::sort(inserted.begin(), inserted.end());
  std::sort(stored.begin(), stored.end());
  CHECK(stored == inserted);
}

TEST_CASE("replay buffer sampling") {
  ReplayBuffer one(3, 1, 10);
  CHECK_THROWS_AS(one.sample(3, std::uint64_t{1}), UsageError);
  one.push(numbered(7));
  const auto three = one.sample(3, std::uint64_t{1});
  REQUIRE(three.size() == 3);
  for (const auto& t : three) CHECK(t.r == 7.0);

  ReplayBuffer buf(3, 1, 100);
  for (int k = 0; k < 50; ++k) buf.push(numbered(k));
  const auto a = buf.sample(32, std::uint64_t{9});
  const auto b = buf.sample(32, std::uint64_t{9});
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i].r == b[i].r);
  Rng r1(4), r2(4);
  CHECK(buf.sample(16, r1).x == buf.sample(16, r2).x);
}

TEST_CASE("replay buffer sampling is uniform (chi-square)") {
  ReplayBuffer buf(3, 1, 10);
  for (int k = 0; k < 10; ++k) buf.push(numbered(k));
  Rng rng(5);
  const Index draws = 100000;
  std::vector<double> counts(10, 0.0);
  for (Index slot : buf.sample_indices(draws, rng)) counts[static_cast<std::size_t>(slot)] += 1.0;
  const double expected = static_cast<double>(draws) / 10.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 99th percentile of chi-square with 9 degrees of freedom
  CHECK(chi2 < 21.666);
}

TEST_CASE("replay buffer latest and export round trip") {
  ReplayBuffer buf(3, 1, 4);
  for (int k = 0; k < 6; ++k) buf.push(numbered(k));
  const TransitionBatch last = buf.latest(3);
  CHECK(last.r(0) == 3.0);
  CHECK(last.r(2) == 5.0);
  ReplayBuffer copy(3, 1, 4);
  copy.import_rows(buf.export_rows(), buf.cursor());
  CHECK(copy.export_rows() == buf.export_rows());
  copy.push(numbered(9));
  buf.push(numbered(9));
  CHECK(copy.export_rows() == buf.export_rows());
}

TEST_CASE("critic target value examples") {
  CHECK(critic_target_value(1.0, 0.0, 2.0, -0.5, 0.99) == doctest::Approx(3.475).epsilon(1e-14));
  CHECK(critic_target_value(1.5, 1.0, 2.0, -0.5, 0.99) == 1.5);
  CHECK(critic_target_value(1.5, 0.0, 2.0, -0.5, 0.0) == 1.5);
}

TEST_CASE("critic targets are off the tape and respect terminals") {
  Config cfg = small_config();
  Agent agent = small_agent(cfg);
  Rng rng(6);
  TransitionBatch batch = random_batch(16, rng);
  Rng noise(7);
  const Vector y = critic_targets(agent, batch, noise);
  for (Index i = 0; i < batch.size(); ++i) {
    if (batch.d(i) == 1.0) CHECK(y(i) == batch.r(i));
  }
  for (const auto& t : agent.target_parameters()) CHECK_FALSE(t.requires_grad());
}

TEST_CASE("gradient routing of each objective") {
  Config cfg = small_config();
  Agent agent = small_agent(cfg);
  Rng rng(8);
  TransitionBatch batch = random_batch(16, rng);
  const std::vector<Tensor> enc = agent.encoder_parameters();
  const std::vector<Tensor> critics = agent.critic_parameters();
  const std::vector<Tensor> ab{agent.koopman.a, agent.koopman.b};
  const std::vector<Tensor> qr{agent.lqr.q_raw, agent.lqr.r_raw};

  SUBCASE("model loss reaches A and B only") {
    agent.zero_all_grads();
    backward(model_objective(agent, batch));
    CHECK(any_nonzero_grad(ab));
    CHECK(all_zero_grads(enc));
    CHECK(all_zero_grads(qr));
    CHECK(all_zero_grads(critics));
    CHECK(agent.encoder.similarity_w.grad().isZero(0.0));
  }
  SUBCASE("contrastive loss reaches the query encoder and W only") {
    agent.zero_all_grads();
    Rng aug(9);
    backward(contrastive_objective(agent, batch, aug));
    CHECK(any_nonzero_grad(enc));
    CHECK_FALSE(agent.encoder.similarity_w.grad().isZero(0.0));
    CHECK(all_zero_grads(ab));
    CHECK(all_zero_grads(qr));
    CHECK(all_zero_grads(critics));
  }
  SUBCASE("actor loss never touches W or the critics") {
    agent.zero_all_grads();
    Rng noise(10);
    backward(actor_loss(agent, batch, noise).loss);
    CHECK(any_nonzero_grad(enc));
    CHECK(any_nonzero_grad(ab));
    CHECK(any_nonzero_grad(qr));
    CHECK_FALSE(agent.log_std.grad().isZero(0.0));
    CHECK(agent.encoder.similarity_w.grad().isZero(0.0));
    CHECK(all_zero_grads(critics));
  }
  SUBCASE("critic loss reaches the critics and encoder, not the LQR costs") {
    agent.zero_all_grads();
    Rng noise(11);
    backward(critic_loss(agent, batch, critic_targets(agent, batch, noise)));
    CHECK(any_nonzero_grad(critics));
    CHECK(any_nonzero_grad(enc));
    CHECK(all_zero_grads(qr));
    CHECK(all_zero_grads(ab));
  }
  for (const auto& t : agent.target_parameters()) {
    CHECK_FALSE(t.requires_grad());
    CHECK(t.grad().isZero(0.0));
  }
  for (const auto& t : agent.encoder.key.parameters()) {
    CHECK_FALSE(t.requires_grad());
    CHECK(t.grad().isZero(0.0));
  }
}

TEST_CASE("update step with zero learning rates leaves parameters unchanged") {
  Config cfg = small_config();
  cfg.lr_critic = cfg.lr_actor = cfg.lr_encoder = cfg.lr_koopman = cfg.lr_alpha = 0.0;
  cfg.tau_ema = 1.0;
  cfg.critic_tau = 1.0;
  Agent agent = small_agent(cfg);
  const auto before = values_of(every_parameter(agent));
  Rng rng(12);
  TransitionBatch batch = random_batch(16, rng);
  RngStreams streams(13);
  update_step(agent, batch, streams);
  const auto after = values_of(every_parameter(agent));
  REQUIRE(before.size() == after.size());
  for (std::size_t i = 0; i < before.size(); ++i) CHECK(before[i] == after[i]);
}

TEST_CASE("update step regression fixture") {
  Config cfg = small_config();
  Agent agent = small_agent(cfg, 21);
  Rng rng(22);
  TransitionBatch batch = random_batch(16, rng);
  RngStreams streams(23);
  const LossReport first = update_step(agent, batch, streams);
  const LossReport second = update_step(agent, batch, streams);
  CHECK(first.critic == doctest::Approx(0.82042495009326977).epsilon(1e-12));
  CHECK(first.actor == doctest::Approx(-0.074957291605627863).epsilon(1e-12));
  CHECK(first.contrastive == doctest::Approx(2.6786887688641996).epsilon(1e-12));
  CHECK(first.model == doctest::Approx(0.18071834906177475).epsilon(1e-12));
  CHECK(second.critic == doctest::Approx(0.87690510785368858).epsilon(1e-12));
  CHECK(second.actor == doctest::Approx(-0.052512232581734722).epsilon(1e-12));
  for (const auto& t : agent.target_parameters()) CHECK_FALSE(t.requires_grad());
}

TEST_CASE("update step reports the first non-finite loss") {
  Config cfg = small_config();
  Agent agent = small_agent(cfg);
  Rng rng(14);
  TransitionBatch batch = random_batch(16, rng);
  batch.r(3) = NAN;
  RngStreams streams(15);
  try {
    update_step(agent, batch, streams);
    FAIL("expected a training error");
  } catch (const TrainingError& e) {
    CHECK(std::string(e.what()).find("critic") != std::string::npos);
  }
}

TEST_CASE("temperature update") {
  const double target = -1.0;
  auto run = [&](const Matrix& log_probs, double& grad_estimate) {
    Tensor log_alpha(Matrix::Constant(1, 1, std::log(0.2)), true);
    // With lr = eps >> |g| the first Adam step moves the parameter by -g (to 1e-6 relative).
    Adam opt(0.9, 0.999, 1e6);
    opt.add(log_alpha, 1e6);
    const double before = log_alpha.item();
    update_temperature(log_alpha, log_probs, target, opt);
    grad_estimate = before - log_alpha.item();
    return log_alpha.item() - before;
  };
  double g = 0.0;
  CHECK(run(Matrix::Constant(8, 1, -target), g) == 0.0);

  // entropy (-log pi = 2) above target: alpha decreases
  CHECK(run(Matrix::Constant(8, 1, -2.0), g) < 0.0);
  CHECK(run(Matrix::Constant(8, 1, 3.0), g) > 0.0);

  Matrix lp(4, 1);
  lp << -0.5, 0.2, 1.0, -2.0;
  run(lp, g);
  // d/dlog_alpha of mean(alpha (-log pi - H)) = alpha mean(-log pi - H)
  const double hand = 0.2 * ((-lp.array() - target).mean());
  CHECK(g == doctest::Approx(hand).epsilon(1e-5));
}

TEST_CASE("perturbation has the requested Frobenius norm") {
  Rng rng(16);
  KoopmanModel k{Tensor(random_matrix(4, 4, rng)), Tensor(random_matrix(4, 1, rng))};
  for (double s : {0.0, 1e-4, 1e-2, 1.0}) {
    Rng pr(17);
    KoopmanModel p = perturb_model(k, s, pr);
    const double da = (p.a.value() - k.a.value()).squaredNorm();
    const double db = (p.b.value() - k.b.value()).squaredNorm();
    CHECK(std::sqrt(da + db) == doctest::Approx(s).epsilon(1e-9));
  }
}

TEST_CASE("baseline controller with zero perturbation is unchanged") {
  Rng rng(18);
  TwoStageModel model;
  model.encoder = make_encoder(3, 4, rng, 8);
  model.koopman = KoopmanModel{Tensor(random_matrix(4, 4, rng, 0.5)), Tensor(random_matrix(4, 1, rng))};
  model.goal_obs = random_matrix(1, 3, rng);
  const Vector q = Vector::Ones(4), r = Vector::Ones(1);
  Rng pr(19);
  const LinearController c0 = design_baseline_controller(model, model.koopman, q, r, 200);
  const LinearController c1 = design_baseline_controller(model, perturb_model(model.koopman, 0.0, pr), q, r, 200);
  CHECK(c0.gain == c1.gain);
  CHECK(c0.z_ref == c1.z_ref);
}

TEST_CASE("two-stage pipeline on a linear system matches the analytic LQR cost") {
  Rng rng(20);
  Matrix a(3, 3), b(3, 1);
  a << 1.01, 0.1, 0.0, 0.0, 0.95, 0.1, 0.05, 0.0, 0.9;
  b << 0.0, 0.1, 0.2;
  const Vector q = Vector::Ones(3), r = Vector::Constant(1, 0.5);
  LinearSystemEnv env(a, b, q, r);

  // identity encoder
  TwoStageModel model;
  model.encoder.query = Mlp({3, 3}, rng);
  model.encoder.query.layers()[0].weight.leaf_value() = Matrix::Identity(3, 3);
  model.encoder.key = model.encoder.query.frozen_copy();
  model.encoder.similarity_w = Tensor(Matrix::Identity(3, 3), true);
  model.goal_obs = Matrix::Zero(1, 3);

  // stage 1 on random-input data
  const Index n = 400;
  Matrix z(n, 3), u(n, 1), zn(n, 3);
  Vector s = env.reset(1);
  for (Index i = 0; i < n; ++i) {
    if (i % 50 == 0) s = env.reset(static_cast<std::uint64_t>(i));
    Vector ui = Vector::Constant(1, uniform(rng, -1, 1));
    StepResult sr = env.step(s, ui);
    z.row(i) = s.transpose();
    u.row(i) = ui.transpose();
    zn.row(i) = sr.next_state.transpose();
    s = sr.next_state;
  }
  model.koopman = fit_least_squares(z, u, zn, 0.0);
  const LinearController c = design_baseline_controller(model, model.koopman, q, r, 500);

  const LqrSolution exact = solve_dare(KoopmanModel{Tensor(a), Tensor(b)}, Tensor(Matrix(q)), Tensor(Matrix(r)), 2000);
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    Vector x = env.reset(seed);
    const double analytic = x.dot(exact.p.value() * x);
    double cost = 0.0;
    for (int k = 0; k < 2000; ++k) {
      const Vector uk = c(x);
      cost += env.cost(x, uk);
      x = env.step(x, uk).next_state;
    }
    CAPTURE(seed);
    CHECK(std::abs(cost - analytic) / analytic < 0.01);
  }
}

TEST_CASE("training with zero steps writes an empty metrics file") {
  Config cfg = small_config();
  cfg.total_steps = 0;
  cfg.eval_episodes = 0;
  cfg.out = scratch_dir("zero_steps").string();
  TrainingRun run = train(cfg);
  CHECK(run.episodes.empty());
  CHECK(slurp(run.out_dir / "metrics.csv") == std::string(kMetricsHeader) + "\n");
  CHECK(read_metrics(run.out_dir / "metrics.csv").empty());
  CHECK(std::filesystem::exists(run.final_checkpoint));
}

TEST_CASE("a resumed run reproduces the uninterrupted run bitwise") {
  Config cfg = small_config();
  cfg.total_steps = 2400;
  cfg.warmup_steps = 200;
  cfg.checkpoint_every = 1300;
  cfg.eval_episodes = 0;
  cfg.out = scratch_dir("resume").string();
  TrainingRun full = train(cfg);
  REQUIRE(full.episodes.size() == 2);
  const std::string metrics = slurp(full.out_dir / "metrics.csv");
  const std::string blob = slurp(full.out_dir / "checkpoints" / "final.bin");

  Trainer resumed = Trainer::resume(full.out_dir / "checkpoints" / "step_1300");
  CHECK(resumed.step() == 1300);
  TrainingRun again = resumed.run();
  CHECK(slurp(again.out_dir / "metrics.csv") == metrics);
  CHECK(slurp(again.out_dir / "checkpoints" / "final.bin") == blob);
}

TEST_CASE("training is deterministic per seed") {
  Config cfg = small_config();
  cfg.total_steps = 1200;
  cfg.warmup_steps = 100;
  cfg.checkpoint_every = 0;
  cfg.eval_episodes = 0;
  cfg.out = scratch_dir("determinism_a").string();
  const std::string a = slurp(train(cfg).out_dir / "metrics.csv");
  cfg.out = scratch_dir("determinism_b").string();
  const std::string b = slurp(train(cfg).out_dir / "metrics.csv");
  CHECK(a == b);
  cfg.seed = 1;
  cfg.out = scratch_dir("determinism_c").string();
  CHECK(slurp(train(cfg).out_dir / "metrics.csv") != a);
}
