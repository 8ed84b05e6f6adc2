#include <filesystem>
#include <iomanip>
#include <map>
#include <sstream>

#include "neuronlab/artifacts.hpp"
#include "neuronlab/evaluation.hpp"
#include "neuronlab/pipeline.hpp"
#include "neuronlab/tasks.hpp"
#include "neuronlab/weights_io.hpp"

namespace neuronlab {

std::string PipelinePaths::task_dir(const std::string& task) const {
    return ws + "/data/" + task;
}
std::string PipelinePaths::examples_path(const std::string& task,
                                         const std::string& split) const {
    return task_dir(task) + "/" + split + ".jsonl";
}
std::string PipelinePaths::proxies_path(const std::string& task,
                                        const std::string& split) const {
    return task_dir(task) + "/" + split + ".proxies.jsonl";
}
std::string PipelinePaths::template_path(const std::string& task) const {
    return task_dir(task) + "/template.txt";
}
std::string PipelinePaths::vocab_path(const std::string& task) const {
    return task_dir(task) + "/vocab.txt";
}
std::string PipelinePaths::model_path(const std::string& name) const {
    return ws + "/models/" + name + ".nlw";
}
std::string PipelinePaths::curve_path(const std::string& name) const {
    return ws + "/models/" + name + ".curve.tsv";
}
std::string PipelinePaths::planted_info_path(const std::string& task) const {
    return ws + "/models/" + task + ".planted.info.json";
}
std::string PipelinePaths::sets_path(const std::string& name) const {
    return ws + "/sets/" + name + ".json";
}
std::string PipelinePaths::plan_path(const std::string& name) const {
    return ws + "/plans/" + name + ".json";
}
std::string PipelinePaths::report_path(const std::string& name) const {
    return ws + "/reports/" + name;
}
std::string PipelinePaths::manifest_path(const std::string& command) const {
    return ws + "/manifests/" + command + ".json";
}

namespace {

void ensure_parent(const std::string& path) {
    std::filesystem::path p(path);
    if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
}

std::string file_hash(const std::string& path) {
    return hash_hex(fnv1a64(read_text_file(path)));
}

std::string fmt_double(double v) {
    std::ostringstream out;
    out << std::setprecision(17) << v;
    return out.str();
}

std::string model_kind(const RunConfig& cfg) {
    std::string k = cfg.get("model");
    if (k != "planted" && k != "trained")
        throw UsageError("config key 'model' must be planted or trained, got '" + k + "'");
    return k;
}

std::string model_name(const RunConfig& cfg) {
    return cfg.get("task") + "." + model_kind(cfg);
}

std::string sets_name(const RunConfig& cfg) {
    std::string n = model_name(cfg) + "." + cfg.get("scorer");
    if (cfg.get("target") != "contrastive") n += "." + cfg.get("target");
    if (!cfg.get_bool("aqua")) n += ".single";
    return n;
}

std::string plan_name(const RunConfig& cfg) {
    return sets_name(cfg) + "." + cfg.get("sets_use") + "." + cfg.get("direction");
}

// Per-command run manifest: configuration hash, input hashes and the output
// files this invocation produced (with their content hashes).
void emit_run_manifest(const PipelinePaths& paths, const std::string& command,
                       const RunConfig& cfg,
                       const std::map<std::string, std::string>& inputs,
                       const std::vector<std::string>& outputs) {
    nlohmann::json j;
    j["schema_version"] = 1;
    j["manifest"] = make_manifest("run." + command, cfg.content_hash(), inputs);
    j["outputs"] = nlohmann::json::object();
    for (const auto& p : outputs) j["outputs"][p] = file_hash(p);
    const std::string path = paths.manifest_path(command);
    ensure_parent(path);
    save_json(path, j);
}

Tokenizer load_vocab(const PipelinePaths& paths, const std::string& task) {
    return Tokenizer::load(paths.vocab_path(task));
}

ModelConfig arch_from_config(const RunConfig& cfg, int vocab_size) {
    ModelConfig a;
    a.n_layers = cfg.get_int("arch_layers");
    a.d_model = cfg.get_int("arch_d_model");
    a.n_heads = cfg.get_int("arch_heads");
    a.d_ffn = cfg.get_int("arch_d_ffn");
    a.max_seq = cfg.get_int("arch_max_seq");
    a.vocab_size = vocab_size;
    const std::string norm = cfg.get("arch_norm");
    if (norm == "layernorm") a.norm = NormKind::layernorm;
    else if (norm == "none") a.norm = NormKind::none;
    else throw UsageError("arch_norm must be layernorm or none, got '" + norm + "'");
    a.precision = Precision::f32;
    a.validate();
    return a;
}

// The checkpoint must have been produced for this task and vocabulary.
void check_model_provenance(const Model& model, const std::string& task,
                            const Tokenizer& tok) {
    const auto& meta = model.meta();
    auto it = meta.find("task");
    if (it == meta.end() || it->second != task)
        throw StaleArtifactError("checkpoint was built for task '" +
                                 (it == meta.end() ? std::string("?") : it->second) +
                                 "', not '" + task + "'");
    it = meta.find("vocab_hash");
    if (it == meta.end() || it->second != hash_hex(tok.content_hash()))
        throw StaleArtifactError("checkpoint vocabulary does not match " + task +
                                 "'s vocabulary file");
}

nlohmann::json delta_to_json(const MetricDelta& d) {
    nlohmann::json j;
    j["before"] = d.before;
    j["after"] = d.after;
    j["delta"] = d.delta;
    if (d.relative_pct.has_value()) j["relative_pct"] = *d.relative_pct;
    else j["relative_pct"] = nullptr;
    j["failed"] = d.failed;
    return j;
}

MetricDelta delta_from_json(const nlohmann::json& j) {
    MetricDelta d;
    d.before = j.at("before").get<double>();
    d.after = j.at("after").get<double>();
    d.delta = j.at("delta").get<double>();
    if (!j.at("relative_pct").is_null())
        d.relative_pct = j.at("relative_pct").get<double>();
    d.failed = j.at("failed").get<bool>();
    return d;
}

}  // namespace

void cmd_gen(const RunConfig& cfg, const std::string& ws) {
    PipelinePaths paths{ws};
    TaskSpec spec;
    spec.family = family_from_name(cfg.get("task"));
    spec.name = cfg.get("task");
    spec.seed = cfg.get_u64("seed");
    spec.n_train = cfg.get_int("n_train");
    spec.n_pool = cfg.get_int("n_pool");
    TaskData data = generate_task(spec);
    Tokenizer tok = Tokenizer::build(data.corpus());

    std::filesystem::create_directories(paths.task_dir(spec.name));
    write_examples_jsonl(paths.examples_path(spec.name, "train"), data.train);
    write_examples_jsonl(paths.examples_path(spec.name, "pool"), data.pool);
    write_proxies_jsonl(paths.proxies_path(spec.name, "train"), data.train_proxies);
    write_proxies_jsonl(paths.proxies_path(spec.name, "pool"), data.pool_proxies);
    write_text_file(paths.template_path(spec.name), data.template_text);
    tok.save(paths.vocab_path(spec.name));

    emit_run_manifest(paths, "gen." + spec.name, cfg, {},
                      {paths.examples_path(spec.name, "train"),
                       paths.examples_path(spec.name, "pool"),
                       paths.proxies_path(spec.name, "train"),
                       paths.proxies_path(spec.name, "pool"),
                       paths.template_path(spec.name), paths.vocab_path(spec.name)});
}

void cmd_train(const RunConfig& cfg, const std::string& ws) {
    PipelinePaths paths{ws};
    const std::string task = cfg.get("task");
    Tokenizer tok = load_vocab(paths, task);

    TaskData data;
    data.spec.family = family_from_name(task);
    data.spec.name = task;
    data.template_text = read_text_file(paths.template_path(task));
    data.train = read_examples_jsonl(paths.examples_path(task, "train"));
    data.pool = read_examples_jsonl(paths.examples_path(task, "pool"));
    data.pool_proxies = read_proxies_jsonl(paths.proxies_path(task, "pool"));

    TrainConfig tc;
    tc.arch = arch_from_config(cfg, tok.vocab_size());
    tc.seed = cfg.get_u64("train_seed");
    tc.steps = cfg.get_int("train_steps");
    tc.batch = cfg.get_int("train_batch");
    tc.lr = cfg.get_double("train_lr");
    tc.grad_clip = cfg.get_double("train_clip");
    tc.eval_every = cfg.get_int("train_eval_every");
    tc.dev_examples = cfg.get_int("train_dev");
    tc.stop_at_com = cfg.get_double("train_stop_com");

    TrainResult res = train_model(data, tok, tc);

    std::map<std::string, std::string> meta = {
        {"task", task},
        {"kind", "trained"},
        {"vocab_hash", hash_hex(tok.content_hash())},
        {"dev_com", fmt_double(res.final_dev_com)},
        {"steps_run", std::to_string(res.steps_run)},
        {"config_hash", hash_hex(cfg.content_hash())},
    };
    const std::string name = task + ".trained";
    ensure_parent(paths.model_path(name));
    save_weights(paths.model_path(name), tc.arch, res.weights, meta);

    std::ostringstream curve;
    curve << "# series\tstep\tvalue\n" << std::setprecision(17);
    for (const auto& [step, loss] : res.loss_curve)
        curve << "loss\t" << step << "\t" << loss << "\n";
    for (const auto& [step, com] : res.dev_curve)
        curve << "dev_com\t" << step << "\t" << com << "\n";
    write_text_file(paths.curve_path(name), curve.str());

    emit_run_manifest(paths, "train." + task, cfg,
                      {{"train", file_hash(paths.examples_path(task, "train"))},
                       {"vocab", hash_hex(tok.content_hash())}},
                      {paths.model_path(name), paths.curve_path(name)});
}

void cmd_plant(const RunConfig& cfg, const std::string& ws) {
    PipelinePaths paths{ws};
    const std::string task = cfg.get("task");
    Tokenizer tok = load_vocab(paths, task);

    TaskData data;
    data.spec.family = family_from_name(task);
    data.spec.name = task;
    data.template_text = read_text_file(paths.template_path(task));

    PlantedModel pm = build_planted(data, tok, true);

    std::map<std::string, std::string> meta = {
        {"task", task},
        {"kind", "planted"},
        {"vocab_hash", hash_hex(tok.content_hash())},
        {"config_hash", hash_hex(cfg.content_hash())},
    };
    const std::string name = task + ".planted";
    ensure_parent(paths.model_path(name));
    const std::uint64_t mh = save_weights(paths.model_path(name), pm.cfg, pm.weights, meta);

    nlohmann::json j;
    j["schema_version"] = 1;
    j["manifest"] =
        make_manifest("planted_info", cfg.content_hash(), {{"model", hash_hex(mh)}});
    j["good"] = nlohmann::json::array();
    j["bad"] = nlohmann::json::array();
    for (const auto& id : pm.info.good)
        j["good"].push_back({{"layer", id.layer}, {"index", id.index}});
    for (const auto& id : pm.info.bad)
        j["bad"].push_back({{"layer", id.layer}, {"index", id.index}});
    j["delta"] = pm.info.delta;
    j["planted_min_effect"] = pm.info.planted_min_effect;
    j["other_max_effect"] = pm.info.other_max_effect;
    j["n_verification_questions"] = pm.info.n_verification_questions;
    j["flips_by_planted"] = pm.info.flips_by_planted;
    j["flips_by_others"] = pm.info.flips_by_others;
    save_json(paths.planted_info_path(task), j);

    emit_run_manifest(paths, "plant." + task, cfg,
                      {{"vocab", hash_hex(tok.content_hash())},
                       {"template", file_hash(paths.template_path(task))}},
                      {paths.model_path(name), paths.planted_info_path(task)});
}

void cmd_attribute(const RunConfig& cfg, const std::string& ws) {
    PipelinePaths paths{ws};
    const std::string task = cfg.get("task");
    const std::string kind = model_kind(cfg);
    Tokenizer tok = load_vocab(paths, task);
    Model model = load_model(paths.model_path(model_name(cfg)));
    check_model_provenance(model, task, tok);

    if (kind == "trained") {
        auto it = model.meta().find("dev_com");
        const double com = it == model.meta().end() ? 0.0 : std::stod(it->second);
        if (com < 0.6)
            throw NumericError("checkpoint comprehension " + fmt_double(com) +
                               " is below the 0.6 gate; attribution on an "
                               "incapable model is not meaningful");
    }

    PromptTemplate tmpl = PromptTemplate::load(paths.template_path(task));
    auto proxies = read_proxies_jsonl(paths.proxies_path(task, "train"));
    const int tr = cfg.get_int("tr");
    if (tr < 1) throw UsageError("tr must be at least 1");
    const int workers = cfg.get_int("workers");
    const bool use_aqua = cfg.get_bool("aqua");

    // Single-question mode scores the original question instead of its three
    // permuted proxies; selection then demands the original answered right.
    std::vector<QAExample> parents;
    if (!use_aqua) {
        parents = read_examples_jsonl(paths.examples_path(task, "train"));
        if (parents.size() != proxies.size())
            throw StaleArtifactError("example and proxy files disagree on size");
        for (size_t i = 0; i < parents.size(); ++i) {
            if (parents[i].id != proxies[i].parent_id)
                throw StaleArtifactError("example and proxy files are out of step at '" +
                                         parents[i].id + "'");
            proxies[i].proxies = {parents[i], parents[i], parents[i]};
        }
    }

    // Attribution runs on examples the model actually gets right: the first
    // tr comprehended training examples in file order.
    auto evals = evaluate_examples(model, tok, tmpl, proxies, {}, workers);
    std::vector<int> chosen;
    for (size_t i = 0; i < evals.size() && static_cast<int>(chosen.size()) < tr; ++i)
        if (evals[i].comprehended) chosen.push_back(static_cast<int>(i));
    if (chosen.empty())
        throw NumericError("model comprehends none of the training examples");

    NeuronSets sets;
    std::vector<std::string> extra_warnings;
    if (static_cast<int>(chosen.size()) < tr)
        extra_warnings.push_back("only " + std::to_string(chosen.size()) + " of " +
                                 std::to_string(tr) +
                                 " requested attribution examples are comprehended");

    const std::string scorer = cfg.get("scorer");
    const TargetKind target = target_from_name(cfg.get("target"));
    IgOptions ig;
    ig.steps = cfg.get_int("m");
    ig.per_neuron = cfg.get_bool("per_neuron");
    AceOptions ace;
    ace.per_example_z = cfg.get_int("z");
    ace.top_k = cfg.get_int("k");

    if (scorer == "ace" || scorer == "kn") {
        std::vector<ScoreMap> maps(chosen.size());
        parallel_for(static_cast<int>(chosen.size()), workers, [&](int i) {
            if (use_aqua) {
                maps[i] = example_score(model, tok, tmpl, proxies[chosen[i]], target, ig);
            } else {
                const QAExample& ex = parents[chosen[i]];
                Target t{target, tok.letter_ids(), ex.correct_index};
                maps[i] = ig_scores(model, compose_prompt(ex, tmpl, tok).tokens, t, ig);
            }
        });
        sets = scorer == "ace" ? ace_aggregate(maps, ace) : kn_aggregate(maps, ace);
    } else if (scorer == "act") {
        std::vector<std::vector<int>> prompts;
        for (int i : chosen) {
            if (use_aqua)
                for (const auto& ex : proxies[i].proxies)
                    prompts.push_back(compose_prompt(ex, tmpl, tok).tokens);
            else
                prompts.push_back(compose_prompt(parents[i], tmpl, tok).tokens);
        }
        sets = top_by_score(activation_scores(model, prompts), ace.top_k);
    } else if (scorer == "random") {
        sets = random_sets(model.config(), ace.top_k, cfg.get_u64("random_seed"));
    } else {
        throw UsageError("unknown scorer '" + scorer +
                         "' (expected ace, kn, act or random)");
    }
    sets.warnings.insert(sets.warnings.end(), extra_warnings.begin(),
                         extra_warnings.end());

    nlohmann::json j;
    j["schema_version"] = 1;
    j["manifest"] = make_manifest(
        "neuron_sets", cfg.content_hash(),
        {{"model", hash_hex(model.weights_hash())},
         {"examples", file_hash(paths.examples_path(task, "train"))},
         {"proxies", file_hash(paths.proxies_path(task, "train"))},
         {"vocab", hash_hex(tok.content_hash())}});
    j["task"] = task;
    j["model_kind"] = kind;
    j["model_hash"] = hash_hex(model.weights_hash());
    j["n_layers"] = model.config().n_layers;
    j["scorer"] = scorer;
    j["aqua"] = use_aqua ? "on" : "off";
    j["target"] = target_name(target);
    j["m"] = ig.steps;
    j["z"] = ace.per_example_z;
    j["k"] = ace.top_k;
    j["tr"] = tr;
    j["example_ids"] = nlohmann::json::array();
    for (int i : chosen) j["example_ids"].push_back(proxies[i].parent_id);
    j["sets"] = sets_to_json(sets);

    const std::string out = paths.sets_path(sets_name(cfg));
    ensure_parent(out);
    save_json(out, j);
    emit_run_manifest(paths, "attribute." + sets_name(cfg), cfg,
                      j["manifest"]["inputs"].get<std::map<std::string, std::string>>(),
                      {out});
}

void cmd_intervene(const RunConfig& cfg, const std::string& ws) {
    PipelinePaths paths{ws};
    const std::string sets_file = paths.sets_path(sets_name(cfg));
    nlohmann::json sj = load_json(sets_file);
    check_manifest(sj, "neuron_sets");

    // refuse to plan against a checkpoint that changed since attribution
    LoadedWeights lw = load_weights(paths.model_path(model_name(cfg)));
    const std::string want = sj.at("model_hash").get<std::string>();
    if (hash_hex(lw.hash) != want)
        throw StaleArtifactError("neuron sets were attributed on model " + want +
                                 " but the checkpoint on disk is " + hash_hex(lw.hash));

    NeuronSets sets = sets_from_json(sj.at("sets"));
    const std::string use = cfg.get("sets_use");
    if (use == "good_only") sets.bad.clear();
    else if (use == "bad_only") sets.good.clear();
    else if (use != "both")
        throw UsageError("sets_use must be both, good_only or bad_only");

    const PlanDirection dir = direction_from_name(cfg.get("direction"));
    const int budget = cfg.get_int("budget");
    const double step = cfg.get_double("sweep_step");
    std::vector<InterventionPlan> plans = ratio_sweep(sets, dir, budget, step);

    nlohmann::json j;
    j["schema_version"] = 1;
    j["manifest"] = make_manifest("plan", cfg.content_hash(),
                                  {{"sets", file_hash(sets_file)}, {"model", want}});
    j["task"] = cfg.get("task");
    j["model_kind"] = model_kind(cfg);
    j["model_hash"] = want;
    j["direction"] = direction_name(dir);
    j["budget"] = budget;
    j["sweep_step"] = step;
    j["sets_use"] = use;
    j["plans"] = nlohmann::json::array();
    for (const auto& p : plans) j["plans"].push_back(plan_to_json(p));

    const std::string out = paths.plan_path(plan_name(cfg));
    ensure_parent(out);
    save_json(out, j);
    emit_run_manifest(paths, "intervene." + plan_name(cfg), cfg,
                      {{"sets", file_hash(sets_file)}, {"model", want}}, {out});
}

void cmd_eval(const RunConfig& cfg, const std::string& ws) {
    PipelinePaths paths{ws};
    const std::string task = cfg.get("task");
    Tokenizer tok = load_vocab(paths, task);
    Model model = load_model(paths.model_path(model_name(cfg)));
    check_model_provenance(model, task, tok);

    const std::string plan_file = paths.plan_path(plan_name(cfg));
    nlohmann::json pj = load_json(plan_file);
    check_manifest(pj, "plan");
    if (pj.at("model_hash").get<std::string>() != hash_hex(model.weights_hash()))
        throw StaleArtifactError("plan " + plan_file +
                                 " targets a different checkpoint than the one on disk");
    const std::string sets_file = paths.sets_path(sets_name(cfg));
    if (pj["manifest"]["inputs"].at("sets").get<std::string>() != file_hash(sets_file))
        throw StaleArtifactError("neuron sets changed after the plan was built");

    PromptTemplate tmpl = PromptTemplate::load(paths.template_path(task));
    auto pool_proxies = read_proxies_jsonl(paths.proxies_path(task, "pool"));
    const int workers = cfg.get_int("workers");

    auto pool_evals = evaluate_examples(model, tok, tmpl, pool_proxies, {}, workers);
    EvalSplit split = select_balanced(pool_evals, cfg.get_int("eval_n"));

    std::vector<ProxySet> chosen_proxies;
    std::vector<ExampleEval> base;
    for (int i : split.chosen) {
        chosen_proxies.push_back(pool_proxies[i]);
        base.push_back(pool_evals[i]);
    }
    const double base_acc = accuracy(base);
    const double base_com = comprehension(base);
    const PlanDirection dir = direction_from_name(pj.at("direction").get<std::string>());

    std::vector<PlanOutcome> grid;
    std::vector<std::vector<ExampleEval>> after_evals;
    for (const auto& pe : pj.at("plans")) {
        InterventionPlan plan = plan_from_json(pe);
        auto after =
            evaluate_examples(model, tok, tmpl, chosen_proxies, plan.overrides(), workers);
        PlanOutcome o;
        o.plan = plan;
        o.acc = metric_delta(base_acc, accuracy(after), dir);
        o.com = metric_delta(base_com, comprehension(after), dir);
        grid.push_back(o);
        after_evals.push_back(std::move(after));
    }
    SweepOutcome sweep = pick_best(grid);

    nlohmann::json j;
    j["schema_version"] = 1;
    j["manifest"] = make_manifest(
        "report", cfg.content_hash(),
        {{"model", hash_hex(model.weights_hash())},
         {"plan", file_hash(plan_file)},
         {"examples", file_hash(paths.examples_path(task, "pool"))},
         {"proxies", file_hash(paths.proxies_path(task, "pool"))}});
    j["config"] = cfg.canonical();
    j["task"] = task;
    j["model_kind"] = model_kind(cfg);
    j["scorer"] = cfg.get("scorer");
    j["direction"] = direction_name(dir);
    j["sets_use"] = pj.at("sets_use").get<std::string>();
    j["base"] = {{"accuracy", base_acc}, {"comprehension", base_com}};
    j["split"] = {{"n", static_cast<int>(split.chosen.size())},
                  {"n_comprehended", split.n_comprehended},
                  {"n_not", split.n_not},
                  {"warnings", split.warnings}};
    nlohmann::json parent_ids = nlohmann::json::array();
    for (const auto& ps : chosen_proxies) parent_ids.push_back(ps.parent_id);
    j["split"]["parent_ids"] = parent_ids;

    j["grid"] = nlohmann::json::array();
    for (const auto& o : grid) {
        nlohmann::json e;
        e["good_ratio"] = o.plan.good_ratio;
        e["n_good"] = static_cast<int>(o.plan.good_used.size());
        e["n_bad"] = static_cast<int>(o.plan.bad_used.size());
        e["good_shortfall"] = o.plan.good_shortfall;
        e["bad_shortfall"] = o.plan.bad_shortfall;
        e["accuracy"] = delta_to_json(o.acc);
        e["comprehension"] = delta_to_json(o.com);
        j["grid"].push_back(e);
    }
    j["best_by_acc"] = sweep.best_by_acc;
    j["best_by_com"] = sweep.best_by_com;

    if (sweep.best_by_acc >= 0) {
        const auto& after = after_evals[sweep.best_by_acc];
        FlipStats flips = count_flips(base, after);
        CollateralReport col = collateral_report(base, after, dir);
        j["best"] = {
            {"good_ratio", grid[sweep.best_by_acc].plan.good_ratio},
            {"flips",
             {{"prev_correct", flips.prev_correct},
              {"flipped", flips.flipped},
              {"gained", flips.gained}}},
            {"collateral",
             {{"all_wrong_same", col.all_wrong_same},
              {"any_wrong_same", col.any_wrong_same},
              {"moved_intended", col.moved_intended},
              {"n_questions", col.n_questions},
              {"mean_rel_change_correct", col.mean_rel_change_correct},
              {"mean_rel_change_wrong", col.mean_rel_change_wrong}}},
        };
    }

    const std::string out = paths.report_path(plan_name(cfg) + ".json");
    ensure_parent(out);
    save_json(out, j);
    emit_run_manifest(paths, "eval." + plan_name(cfg), cfg,
                      j["manifest"]["inputs"].get<std::map<std::string, std::string>>(),
                      {out});
}

void cmd_report(const RunConfig& cfg, const std::string& ws) {
    PipelinePaths paths{ws};
    const std::string task = cfg.get("task");
    const std::string rj_path = paths.report_path(plan_name(cfg) + ".json");
    nlohmann::json rj = load_json(rj_path);
    check_manifest(rj, "report");

    nlohmann::json sj = load_json(paths.sets_path(sets_name(cfg)));
    check_manifest(sj, "neuron_sets");
    NeuronSets sets = sets_from_json(sj.at("sets"));
    LayerHistogram hist = layer_histogram(sets, sj.at("n_layers").get<int>());

    std::ostringstream out;
    out << std::fixed << std::setprecision(4);
    out << "run: " << plan_name(cfg) << "\n";
    out << "model: " << rj.at("model_kind").get<std::string>() << " ("
        << sj.at("model_hash").get<std::string>() << ")\n";
    out << "scorer: " << rj.at("scorer").get<std::string>()
        << "  direction: " << rj.at("direction").get<std::string>()
        << "  sets_use: " << rj.at("sets_use").get<std::string>() << "\n\n";

    out << "[config]\n" << rj.at("config").get<std::string>() << "\n";

    out << "[evaluation split]\n";
    out << "questions: " << rj["split"]["n"].get<int>() << " ("
        << rj["split"]["n_comprehended"].get<int>() << " comprehended, "
        << rj["split"]["n_not"].get<int>() << " not)\n";
    for (const auto& w : rj["split"]["warnings"])
        out << "warning: " << w.get<std::string>() << "\n";
    out << "\n[base]\naccuracy: " << rj["base"]["accuracy"].get<double>()
        << "\ncomprehension: " << rj["base"]["comprehension"].get<double>() << "\n";

    out << "\n[ratio sweep]\n";
    out << "ratio  n_good  n_bad  acc_after  acc_rel%   com_after  com_rel%   flags\n";
    int idx = 0;
    for (const auto& e : rj.at("grid")) {
        MetricDelta acc = delta_from_json(e.at("accuracy"));
        MetricDelta com = delta_from_json(e.at("comprehension"));
        out << std::setw(5) << std::setprecision(2) << e["good_ratio"].get<double>()
            << std::setprecision(4) << "  " << std::setw(6) << e["n_good"].get<int>()
            << "  " << std::setw(5) << e["n_bad"].get<int>() << "  " << std::setw(9)
            << acc.after << "  ";
        auto rel = [&](const MetricDelta& d) {
            std::ostringstream c;
            c << std::fixed << std::setprecision(2);
            if (d.relative_pct.has_value()) c << std::setw(8) << *d.relative_pct;
            else c << "     n/a";
            return c.str();
        };
        out << rel(acc) << "  " << std::setw(9) << com.after << "  " << rel(com) << "  ";
        std::vector<std::string> flags;
        if (acc.failed) flags.push_back("acc_fail");
        if (com.failed) flags.push_back("com_fail");
        if (e["good_shortfall"].get<bool>()) flags.push_back("good_short");
        if (e["bad_shortfall"].get<bool>()) flags.push_back("bad_short");
        if (idx == rj["best_by_acc"].get<int>()) flags.push_back("best_acc");
        if (idx == rj["best_by_com"].get<int>()) flags.push_back("best_com");
        for (size_t f = 0; f < flags.size(); ++f) out << (f ? "," : "") << flags[f];
        out << "\n";
        ++idx;
    }

    if (rj.contains("best")) {
        const auto& b = rj["best"];
        out << "\n[best plan by accuracy]\n";
        out << "good_ratio: " << std::setprecision(2) << b["good_ratio"].get<double>()
            << std::setprecision(4) << "\n";
        out << "answer flips: " << b["flips"]["flipped"].get<int>() << " of "
            << b["flips"]["prev_correct"].get<int>() << " previously correct; "
            << b["flips"]["gained"].get<int>() << " gained\n";
        const auto& c = b["collateral"];
        out << "collateral (x <= y <= z of " << c["n_questions"].get<int>()
            << "): x=" << c["all_wrong_same"].get<int>()
            << " y=" << c["any_wrong_same"].get<int>()
            << " z=" << c["moved_intended"].get<int>() << "\n";
        out << "mean relative prob change, correct option: "
            << c["mean_rel_change_correct"].get<double>() << "\n";
        out << "mean relative prob change, wrong options: "
            << c["mean_rel_change_wrong"].get<double>() << "\n";
    } else {
        out << "\nno plan produced a usable (non-failed, defined) metric change\n";
    }

    out << "\n[neuron sets]\n";
    out << "good: " << sets.good.size() << "  bad: " << sets.bad.size() << "\n";
    out << "layer  good  bad\n";
    for (size_t l = 0; l < hist.good.size(); ++l)
        out << std::setw(5) << l << "  " << std::setw(4) << hist.good[l] << "  "
            << std::setw(3) << hist.bad[l] << "\n";
    for (const auto& w : sets.warnings) out << "warning: " << w << "\n";

    if (rj.at("model_kind").get<std::string>() == "planted" &&
        file_exists(paths.planted_info_path(task))) {
        nlohmann::json pi = load_json(paths.planted_info_path(task));
        out << "\n[construction ground truth]\n";
        out << "planted good: " << pi["good"].size()
            << "  planted bad: " << pi["bad"].size() << "\n";
        out << "guaranteed per-neuron logit effect: >= " << pi["delta"].get<double>()
            << " (measured min " << pi["planted_min_effect"].get<double>()
            << ", strongest bystander " << pi["other_max_effect"].get<double>() << ")\n";
        auto in_set = [&](const nlohmann::json& truth,
                          const std::vector<NeuronScore>& found) {
            int hit = 0;
            for (const auto& t : truth) {
                NeuronId id{t["layer"].get<int>(), t["index"].get<int>()};
                for (const auto& f : found)
                    if (f.id == id) {
                        ++hit;
                        break;
                    }
            }
            return hit;
        };
        out << "recovered good: " << in_set(pi["good"], sets.good) << "/"
            << pi["good"].size() << "  recovered bad: " << in_set(pi["bad"], sets.bad)
            << "/" << pi["bad"].size() << "\n";
    }

    const std::string txt = paths.report_path(plan_name(cfg) + ".txt");
    write_text_file(txt, out.str());
    emit_run_manifest(paths, "report." + plan_name(cfg), cfg,
                      {{"report", file_hash(rj_path)}}, {txt});
}

}  // namespace neuronlab
