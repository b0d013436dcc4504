#include <algorithm>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <memory>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "dackgr/evaluator.h"
#include "dackgr/kge.h"
#include "dackgr/log.h"
#include "dackgr/sampler.h"
#include "dackgr/trainer.h"
#include "json.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace dackgr;

namespace {

json read_json(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  try {
    return json::parse(in);
  } catch (const json::parse_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void write_json(const fs::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << j.dump(2) << "\n";
}

TripleFormat parse_format(const std::string& s) {
  if (s == "hrt") return TripleFormat::kHeadRelationTail;
  if (s == "htr") return TripleFormat::kHeadTailRelation;
  throw std::invalid_argument("unknown triple format '" + s +
                              "' (expected hrt or htr)");
}

template <class T>
void override_with(const CLI::Option* opt, const T& value, T& target) {
  if (opt->count()) target = value;
}

KnowledgeGraph load_graph(const fs::path& dir, const std::string& format) {
  if (!fs::is_directory(dir))
    throw std::runtime_error("data directory " + dir.string() + " not found");
  return KnowledgeGraph::load_dir(dir, parse_format(format));
}

std::vector<NamedTriple> read_inputs(const std::vector<std::string>& inputs,
                                     TripleFormat format) {
  std::vector<NamedTriple> all;
  std::set<NamedTriple> seen;
  auto add = [&](const fs::path& p) {
    for (auto& t : read_triples(p, format))
      if (seen.insert(t).second) all.push_back(std::move(t));
  };
  for (const auto& in : inputs) {
    if (fs::is_directory(in)) {
      for (const char* name : {"train.tsv", "valid.tsv", "test.tsv"})
        if (fs::exists(fs::path(in) / name)) add(fs::path(in) / name);
    } else {
      add(in);
    }
  }
  return all;
}

// --- sample-dataset ---

struct SampleArgs {
  std::vector<std::string> inputs;
  std::string out;
  std::string format = "hrt";
  double fraction = 1.0;
  std::size_t entities = 0;
  std::string seeds_file;
  std::size_t rounds = 0;
  std::vector<double> ratios = {0.8, 0.1, 0.1};
  std::uint64_t seed = 1;
};

int run_sample(const SampleArgs& a) {
  const auto all = read_inputs(a.inputs, parse_format(a.format));
  std::vector<NamedTriple> sampled;
  json method;
  if (a.entities || !a.seeds_file.empty()) {
    std::vector<std::string> seeds;
    if (!a.seeds_file.empty()) {
      std::ifstream in(a.seeds_file);
      if (!in) throw std::runtime_error("cannot open " + a.seeds_file);
      for (std::string line; std::getline(in, line);)
        if (!line.empty()) seeds.push_back(line);
    } else {
      seeds = random_entities(all, a.entities, a.seed);
    }
    sampled = sample_by_entities(all, seeds, a.rounds);
    method = {{"kind", "entities"}, {"seed_entities", seeds.size()},
              {"expansion_rounds", a.rounds}};
  } else {
    sampled = retain_fraction(all, a.fraction, a.seed);
    method = {{"kind", "fraction"}, {"fraction", a.fraction}};
  }
  if (a.ratios.size() != 3)
    throw std::invalid_argument("--ratios takes train,valid,test");
  const Splits s =
      resplit(sampled, {a.ratios[0], a.ratios[1], a.ratios[2]}, a.seed);
  fs::create_directories(a.out);
  write_triples(fs::path(a.out) / "train.tsv", s.train);
  write_triples(fs::path(a.out) / "valid.tsv", s.valid);
  write_triples(fs::path(a.out) / "test.tsv", s.test);
  json report = {{"seed", a.seed},
                 {"method", method},
                 {"input", sparsity_of(all).to_json()},
                 {"sampled", sparsity_of(sampled).to_json()},
                 {"train", sparsity_of(s.train).to_json()},
                 {"splits",
                  {{"train", s.train.size()},
                   {"valid", s.valid.size()},
                   {"test", s.test.size()},
                   {"reassigned_to_train", s.reassigned}}}};
  write_json(fs::path(a.out) / "sparsity.json", report);
  std::cout << report.dump(2) << "\n";
  return 0;
}

// --- inspect-graph ---

int run_inspect(const std::string& data, const std::string& format) {
  const auto kg = load_graph(data, format);
  std::vector<std::size_t> per_relation(kg.vocab().base_relation_count(), 0);
  for (const auto& t : kg.train()) ++per_relation[t.relation];
  json rel = json::object();
  for (int r = 0; r < kg.vocab().base_relation_count(); ++r)
    rel[kg.vocab().relation_name(r)] = per_relation[r];
  json out = {{"sparsity", kg.sparsity().to_json()},
              {"splits",
               {{"train", kg.train().size()},
                {"valid", kg.valid().size()},
                {"test", kg.test().size()}}},
              {"train_facts_per_relation", rel}};
  std::cout << out.dump(2) << "\n";
  return 0;
}

// --- train-kge ---

struct KgeArgs {
  std::string data, out, format = "hrt", config;
  std::string model;
  std::size_t dim = 0, epochs = 0, batch_size = 0;
  double lr = 0, label_smoothing = 0;
  std::uint64_t seed = 1;
};

int run_train_kge(const KgeArgs& a, const CLI::App& cmd) {
  KgeConfig c;
  if (!a.config.empty()) c = KgeConfig::from_json(read_json(a.config));
  if (cmd.get_option("--model")->count()) c.kind = parse_kge_kind(a.model);
  override_with(cmd.get_option("--dim"), a.dim, c.dim);
  override_with(cmd.get_option("--epochs"), a.epochs, c.epochs);
  override_with(cmd.get_option("--batch-size"), a.batch_size, c.batch_size);
  override_with(cmd.get_option("--lr"), a.lr, c.lr);
  override_with(cmd.get_option("--label-smoothing"), a.label_smoothing,
                c.label_smoothing);
  override_with(cmd.get_option("--seed"), a.seed, c.seed);
  c = KgeConfig::from_json(c.to_json());
  const auto kg = load_graph(a.data, a.format);
  const fs::path out(a.out);
  fs::create_directories(out);
  write_json(out / "config.json", {{"command", "train-kge"},
                                   {"data", fs::absolute(a.data).string()},
                                   {"format", a.format},
                                   {"kge", c.to_json()}});
  KgeTrainReport rep;
  const ScoreModel model = train_kge(kg, c, &rep);
  model.save(out / "model", static_cast<std::int64_t>(rep.epochs_run));
  json report = {{"epochs_run", rep.epochs_run},
                 {"best_epoch", rep.best_epoch},
                 {"best_valid_mrr", rep.best_valid_mrr},
                 {"epoch_loss", rep.epoch_loss}};
  if (!kg.test().empty())
    report["test_mrr"] = kge_filtered_mrr(model, kg, kg.test());
  write_json(out / "report.json", report);
  std::cout << report.dump(2) << "\n";
  return 0;
}

// --- train-agent ---

struct AgentArgs {
  std::string data, out, format = "hrt", config, kge;
  std::string anticipation;
  double alpha = 0, lr = 0, entropy = 0;
  std::size_t max_actions = 0, top_k = 0, epochs = 0, steps = 0, beam = 0;
  std::size_t rollouts = 0, batch_size = 0, dim = 0, hidden = 0, layers = 0;
  std::vector<double> alpha_grid;
  std::vector<std::size_t> max_actions_grid, top_k_grid;
  std::vector<std::string> query_relations;
  std::uint64_t seed = 1;
};

struct AgentRun {
  fs::path dir;
  TrainConfig config;
  RankingMetrics valid;
};

json agent_run_config(const AgentArgs& a, const TrainConfig& c) {
  return {{"command", "train-agent"},
          {"data", fs::absolute(a.data).string()},
          {"format", a.format},
          {"kge", a.kge.empty() ? json() : json(fs::absolute(a.kge).string())},
          {"seed", c.seed},
          {"train", c.to_json()}};
}

AgentRun train_one(const AgentArgs& a, const KnowledgeGraph& kg,
                   const ScoreModel* kge, const TrainConfig& c,
                   const fs::path& dir) {
  fs::create_directories(dir);
  write_json(dir / "config.json", agent_run_config(a, c));
  std::ofstream log(dir / "epochs.jsonl");
  Trainer trainer(kg, kge, c);
  trainer.train([&](const EpochReport& r) { log << r.to_json().dump() << "\n" << std::flush; });
  AgentRun run{dir, c, trainer.validate()};
  trainer.policy().save(dir / "policy", static_cast<std::int64_t>(c.epochs),
                        {{"best_epoch", trainer.best_epoch()}});
  write_json(dir / "summary.json", {{"best_epoch", trainer.best_epoch()},
                                    {"valid", run.valid.to_json()}});
  return run;
}

std::string grid_name(const CompletionConfig& c) {
  std::ostringstream s;
  s << "alpha_" << c.alpha << "_m_" << c.max_actions << "_k_" << c.top_k;
  return s.str();
}

int run_train_agent(const AgentArgs& a, const CLI::App& cmd) {
  TrainConfig c;
  if (!a.config.empty()) c = TrainConfig::from_json(read_json(a.config));
  auto opt = [&](const char* name) { return cmd.get_option(name); };
  if (opt("--anticipation")->count())
    c.policy.anticipation = parse_anticipation(a.anticipation);
  override_with(opt("--completion-alpha"), a.alpha, c.env.completion.alpha);
  override_with(opt("--max-actions"), a.max_actions, c.env.completion.max_actions);
  override_with(opt("--top-k"), a.top_k, c.env.completion.top_k);
  override_with(opt("--epochs"), a.epochs, c.epochs);
  override_with(opt("--steps"), a.steps, c.env.max_steps);
  override_with(opt("--beam"), a.beam, c.beam_width);
  override_with(opt("--rollouts"), a.rollouts, c.rollouts);
  override_with(opt("--batch-size"), a.batch_size, c.batch_size);
  override_with(opt("--lr"), a.lr, c.lr);
  override_with(opt("--entropy"), a.entropy, c.entropy_weight);
  override_with(opt("--dim"), a.dim, c.policy.dim);
  override_with(opt("--hidden"), a.hidden, c.policy.hidden);
  override_with(opt("--layers"), a.layers, c.policy.layers);
  override_with(opt("--query-relations"), a.query_relations, c.query_relations);
  if (opt("--seed")->count()) c.seed = c.policy.seed = a.seed;
  c = TrainConfig::from_json(c.to_json());

  const auto kg = load_graph(a.data, a.format);
  std::unique_ptr<ScoreModel> kge;
  if (!a.kge.empty()) {
    kge = std::make_unique<ScoreModel>(ScoreModel::load(fs::path(a.kge) / "model"));
    if (kge->entity_count() != kg.entity_count() ||
        kge->relation_count() != kg.relation_count())
      throw std::runtime_error("KGE checkpoint does not match the graph in " +
                               a.data);
  }

  const auto alphas = a.alpha_grid.empty() ? std::vector<double>{c.env.completion.alpha}
                                           : a.alpha_grid;
  const auto ms = a.max_actions_grid.empty()
                      ? std::vector<std::size_t>{c.env.completion.max_actions}
                      : a.max_actions_grid;
  const auto ks = a.top_k_grid.empty()
                      ? std::vector<std::size_t>{c.env.completion.top_k}
                      : a.top_k_grid;
  const fs::path out(a.out);
  if (alphas.size() * ms.size() * ks.size() == 1) {
    c.env.completion = {alphas[0], ms[0], ks[0]};
    c.env.completion.validate();
    auto run = train_one(a, kg, kge.get(), c, out);
    std::cout << json{{"valid", run.valid.to_json()}}.dump(2) << "\n";
    return 0;
  }
  std::vector<AgentRun> runs;
  json grid = json::array();
  for (double alpha : alphas)
    for (std::size_t m : ms)
      for (std::size_t k : ks) {
        TrainConfig g = c;
        g.env.completion = {alpha, m, k};
        g.env.completion.validate();
        runs.push_back(train_one(a, kg, kge.get(), g,
                                 out / "grid" / grid_name(g.env.completion)));
        grid.push_back({{"completion", g.env.completion.to_json()},
                        {"dir", runs.back().dir.string()},
                        {"valid", runs.back().valid.to_json()}});
      }
  // Valid Hits@10 decides, MRR breaks ties, earlier grid points win the rest.
  const AgentRun* best = &runs.front();
  for (const auto& r : runs)
    if (r.valid.hits10 > best->valid.hits10 ||
        (r.valid.hits10 == best->valid.hits10 && r.valid.mrr > best->valid.mrr))
      best = &r;
  for (const char* name : {"config.json", "epochs.jsonl", "summary.json"})
    fs::copy_file(best->dir / name, out / name,
                  fs::copy_options::overwrite_existing);
  fs::remove_all(out / "policy");
  fs::copy(best->dir / "policy", out / "policy", fs::copy_options::recursive);
  json selection = {{"selected", best->dir.string()},
                    {"completion", best->config.env.completion.to_json()},
                    {"grid", grid}};
  write_json(out / "grid.json", selection);
  std::cout << selection.dump(2) << "\n";
  return 0;
}

// --- evaluate ---

struct EvalArgs {
  std::string run, split = "test", out;
  std::size_t beam = 0, paths = 3;
};

int run_evaluate(const EvalArgs& a, const CLI::App& cmd) {
  const fs::path run(a.run);
  const json cfg = read_json(run / "config.json");
  if (cfg.value("command", "") != "train-agent")
    throw std::runtime_error(a.run + " is not a train-agent run directory");
  const TrainConfig tc = TrainConfig::from_json(cfg.at("train"));
  const auto kg = load_graph(cfg.at("data").get<std::string>(),
                             cfg.value("format", "hrt"));
  std::unique_ptr<ScoreModel> kge;
  if (!cfg.at("kge").is_null())
    kge = std::make_unique<ScoreModel>(
        ScoreModel::load(fs::path(cfg.at("kge").get<std::string>()) / "model"));
  const PolicyNetwork policy = PolicyNetwork::load(run / "policy");
  Environment env(kg, kge.get(), tc.env);
  std::span<const Triple> triples;
  if (a.split == "test") triples = kg.test();
  else if (a.split == "valid") triples = kg.valid();
  else throw std::invalid_argument("--split must be test or valid");
  EvalConfig ec;
  ec.beam_width = cmd.get_option("--beam")->count() ? a.beam : tc.beam_width;
  ec.seed = tc.seed;
  ec.keep_paths = a.paths;
  const auto queries = queries_of(triples);
  const auto result = evaluate(policy, env, queries, ec);

  const fs::path out = a.out.empty() ? run / ("eval_" + a.split) : fs::path(a.out);
  fs::create_directories(out);
  json metrics = result.metrics.to_json();
  metrics["split"] = a.split;
  metrics["beam_width"] = ec.beam_width;
  write_json(out / "metrics.json", metrics);
  const Vocab& v = kg.vocab();
  std::ofstream ranks(out / "ranks.csv");
  ranks << "head,relation,tail,rank\n";
  std::ofstream paths(out / "paths.txt");
  paths << std::setprecision(6);
  for (const auto& q : result.queries) {
    ranks << v.entity_name(q.query.head) << "," << v.relation_name(q.query.relation)
          << "," << v.entity_name(q.query.tail) << "," << q.rank << "\n";
    paths << v.entity_name(q.query.head) << " " << v.relation_name(q.query.relation)
          << " ? (gold " << v.entity_name(q.query.tail) << ", rank " << q.rank
          << ")\n";
    for (const auto& p : q.paths)
      paths << "  " << p.log_prob << "  " << format_path(p, q.query, v) << "\n";
  }
  std::cout << metrics.dump(2) << "\n";
  return 0;
}

// --- analyze ---

int run_analyze(const std::vector<std::string>& runs, const std::string& out,
                std::size_t last) {
  struct Row {
    std::string run;
    CompletionConfig completion;
    double ratio = 0.0;
    double hits10 = 0.0;
  };
  std::vector<Row> rows;
  fs::create_directories(out);
  std::ofstream by_epoch(fs::path(out) / "ratio_vs_epoch.csv");
  by_epoch << "run,alpha,epoch,dc_ratio,hit_rate,mean_reward\n";
  for (const auto& r : runs) {
    const json cfg = read_json(fs::path(r) / "config.json");
    const TrainConfig tc = TrainConfig::from_json(cfg.at("train"));
    std::ifstream log(fs::path(r) / "epochs.jsonl");
    if (!log) throw std::runtime_error("no epochs.jsonl in " + r);
    std::vector<double> ratios;
    for (std::string line; std::getline(log, line);) {
      if (line.empty()) continue;
      const auto rep = EpochReport::from_json(json::parse(line));
      ratios.push_back(rep.dc_ratio);
      by_epoch << r << "," << tc.env.completion.alpha << "," << rep.epoch << ","
               << rep.dc_ratio << "," << rep.hit_rate << "," << rep.mean_reward
               << "\n";
    }
    Row row{r, tc.env.completion, last_epochs_average(ratios, last), 0.0};
    if (fs::exists(fs::path(r) / "summary.json"))
      row.hits10 = read_json(fs::path(r) / "summary.json")
                       .at("valid")
                       .value("hits@10", 0.0);
    rows.push_back(row);
  }
  std::stable_sort(rows.begin(), rows.end(), [](const Row& x, const Row& y) {
    return x.completion.alpha < y.completion.alpha;
  });
  std::ofstream by_alpha(fs::path(out) / "ratio_vs_alpha.csv");
  by_alpha << "run,alpha,max_actions,top_k,dc_ratio_last" << last
           << ",valid_hits10\n";
  for (const auto& row : rows)
    by_alpha << row.run << "," << row.completion.alpha << ","
             << row.completion.max_actions << "," << row.completion.top_k << ","
             << row.ratio << "," << row.hits10 << "\n";
  std::cout << "wrote " << (fs::path(out) / "ratio_vs_epoch.csv").string()
            << " and " << (fs::path(out) / "ratio_vs_alpha.csv").string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-hop reasoning over sparse knowledge graphs"};
  app.require_subcommand(1);
  bool quiet = false;
  app.add_flag("-q,--quiet", quiet, "Only print warnings and results");

  SampleArgs sa;
  auto* sample = app.add_subcommand("sample-dataset",
                                    "Sample a sparse dataset and write fresh splits");
  sample->add_option("-i,--input", sa.inputs, "Triple files or dataset directories")
      ->required();
  sample->add_option("-o,--out", sa.out, "Output directory")->required();
  sample->add_option("--format", sa.format, "Column order: hrt or htr");
  auto* frac = sample->add_option("--fraction", sa.fraction,
                                  "Share of triples to retain")
                   ->check(CLI::Range(0.0, 1.0));
  auto* ents = sample->add_option("--entities", sa.entities,
                                  "Number of random seed entities");
  auto* seeds = sample->add_option("--seeds-file", sa.seeds_file,
                                   "Seed entities, one per line")
                    ->check(CLI::ExistingFile);
  frac->excludes(ents)->excludes(seeds);
  ents->excludes(seeds);
  sample->add_option("--rounds", sa.rounds, "Neighbourhood expansion rounds");
  sample->add_option("--ratios", sa.ratios, "train,valid,test shares")
      ->delimiter(',')
      ->expected(3);
  sample->add_option("--seed", sa.seed, "Random seed");

  std::string inspect_data, inspect_format = "hrt";
  auto* inspect = app.add_subcommand("inspect-graph", "Print graph statistics");
  inspect->add_option("-d,--data", inspect_data, "Dataset directory")->required();
  inspect->add_option("--format", inspect_format, "Column order: hrt or htr");

  KgeArgs ka;
  auto* kge = app.add_subcommand("train-kge", "Pretrain a KGE model");
  kge->add_option("-d,--data", ka.data, "Dataset directory")->required();
  kge->add_option("-o,--out", ka.out, "Run directory")->required();
  kge->add_option("-c,--config", ka.config, "KGE config JSON")->check(CLI::ExistingFile);
  kge->add_option("--format", ka.format, "Column order: hrt or htr");
  kge->add_option("--model", ka.model, "conve, distmult or transe");
  kge->add_option("--dim", ka.dim, "Embedding size");
  kge->add_option("--epochs", ka.epochs, "Epoch budget");
  kge->add_option("--batch-size", ka.batch_size, "Batch size");
  kge->add_option("--lr", ka.lr, "Learning rate");
  kge->add_option("--label-smoothing", ka.label_smoothing, "Label smoothing");
  kge->add_option("--seed", ka.seed, "Random seed");

  AgentArgs aa;
  auto* agent = app.add_subcommand("train-agent", "Train the reasoning agent");
  agent->add_option("-d,--data", aa.data, "Dataset directory")->required();
  agent->add_option("-o,--out", aa.out, "Run directory")->required();
  agent->add_option("-c,--config", aa.config, "Agent config JSON")
      ->check(CLI::ExistingFile);
  agent->add_option("--format", aa.format, "Column order: hrt or htr");
  agent->add_option("--kge", aa.kge, "train-kge run directory");
  agent->add_option("--anticipation", aa.anticipation,
                    "off, sample, top-one or average");
  agent->add_option("--completion-alpha", aa.alpha, "Completion proportion");
  agent->add_option("--max-actions", aa.max_actions, "Completion cap M");
  agent->add_option("--top-k", aa.top_k, "Tails per proposed relation");
  agent->add_option("--alpha-grid", aa.alpha_grid, "Grid over alpha")->delimiter(',');
  agent->add_option("--max-actions-grid", aa.max_actions_grid, "Grid over M")
      ->delimiter(',');
  agent->add_option("--top-k-grid", aa.top_k_grid, "Grid over k")->delimiter(',');
  agent->add_option("--epochs", aa.epochs, "Epochs");
  agent->add_option("--steps", aa.steps, "Path length T");
  agent->add_option("--beam", aa.beam, "Validation beam width");
  agent->add_option("--rollouts", aa.rollouts, "Episodes per query");
  agent->add_option("--batch-size", aa.batch_size, "Queries per batch");
  agent->add_option("--lr", aa.lr, "Learning rate");
  agent->add_option("--entropy", aa.entropy, "Initial entropy weight");
  agent->add_option("--dim", aa.dim, "Policy embedding size");
  agent->add_option("--hidden", aa.hidden, "History LSTM size");
  agent->add_option("--layers", aa.layers, "History LSTM layers");
  agent->add_option("--query-relations", aa.query_relations,
                    "Relations used as training queries")
      ->delimiter(',');
  agent->add_option("--seed", aa.seed, "Random seed");

  EvalArgs ea;
  auto* eval = app.add_subcommand("evaluate", "Rank test or valid queries");
  eval->add_option("-r,--run", ea.run, "train-agent run directory")->required();
  eval->add_option("--split", ea.split, "test or valid");
  eval->add_option("--beam", ea.beam, "Beam width");
  eval->add_option("--paths", ea.paths, "Paths kept per query in paths.txt");
  eval->add_option("-o,--out", ea.out, "Output directory");

  std::vector<std::string> runs;
  std::string analyze_out;
  std::size_t last = 5;
  auto* analyze = app.add_subcommand("analyze", "Completion usage across runs");
  analyze->add_option("-r,--runs", runs, "train-agent run directories")->required();
  analyze->add_option("-o,--out", analyze_out, "Output directory")->required();
  analyze->add_option("--last", last, "Epochs averaged for the ratio");

  CLI11_PARSE(app, argc, argv);
  set_log_level(quiet ? LogLevel::kWarning : LogLevel::kInfo);
  try {
    if (*sample) return run_sample(sa);
    if (*inspect) return run_inspect(inspect_data, inspect_format);
    if (*kge) return run_train_kge(ka, *kge);
    if (*agent) return run_train_agent(aa, *agent);
    if (*eval) return run_evaluate(ea, *eval);
    if (*analyze) return run_analyze(runs, analyze_out, last);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
