#include <cstdio>
#include <exception>
#include <functional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "neuronlab/common.hpp"
#include "neuronlab/pipeline.hpp"

namespace {

using neuronlab::RunConfig;

struct CommonArgs {
    std::string config_file;
    std::string workspace;
    std::vector<std::string> overrides;
};

void add_common(CLI::App* sub, CommonArgs& args) {
    sub->add_option("--config", args.config_file,
                    "key=value configuration file (defaults apply when omitted)");
    sub->add_option("--workspace", args.workspace,
                    "workspace root (wins over the config's workspace key)");
    sub->add_option("overrides", args.overrides,
                    "key=value overrides, applied after the config file");
}

RunConfig resolve(const CommonArgs& args) {
    RunConfig cfg = args.config_file.empty() ? RunConfig::make()
                                             : RunConfig::from_file(args.config_file);
    cfg.apply(args.overrides);
    if (!args.workspace.empty()) cfg.apply({"workspace=" + args.workspace});
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "neuronlab: locate antagonistic feed-forward neurons in small "
        "transformers by contrastive integrated gradients, then steer task "
        "performance by editing them"};
    app.require_subcommand(1);

    struct Sub {
        const char* name;
        const char* help;
        void (*fn)(const RunConfig&, const std::string&);
    };
    const Sub subs[] = {
        {"gen", "generate a task's examples, proxies, template and vocabulary",
         neuronlab::cmd_gen},
        {"train", "train a checkpoint on a generated task", neuronlab::cmd_train},
        {"plant", "construct the verified planted-circuit checkpoint",
         neuronlab::cmd_plant},
        {"attribute", "score neurons and write the good/bad sets",
         neuronlab::cmd_attribute},
        {"intervene", "turn neuron sets into a ratio sweep of edit plans",
         neuronlab::cmd_intervene},
        {"eval", "measure every plan against the balanced question split",
         neuronlab::cmd_eval},
        {"report", "render the human-readable run report", neuronlab::cmd_report},
    };

    constexpr int n_subs = sizeof(subs) / sizeof(subs[0]);
    std::vector<std::function<void()>> pending;
    CommonArgs args[n_subs + 1];
    for (int i = 0; i < n_subs; ++i) {
        const Sub& s = subs[i];
        CLI::App* sub = app.add_subcommand(s.name, s.help);
        CommonArgs& a = args[i];
        add_common(sub, a);
        sub->callback([&a, fn = s.fn, &pending] {
            pending.push_back([&a, fn] {
                RunConfig cfg = resolve(a);
                fn(cfg, cfg.get("workspace"));
            });
        });
    }

    // convenience chain: everything from data generation to the report
    {
        CLI::App* sub = app.add_subcommand(
            "run", "full pipeline: gen, plant or train, attribute, intervene, "
                   "eval, report");
        CommonArgs& a = args[n_subs];
        add_common(sub, a);
        sub->callback([&a, &pending] {
            pending.push_back([&a] {
                RunConfig cfg = resolve(a);
                const std::string ws = cfg.get("workspace");
                neuronlab::cmd_gen(cfg, ws);
                if (cfg.get("model") == "trained") neuronlab::cmd_train(cfg, ws);
                else neuronlab::cmd_plant(cfg, ws);
                neuronlab::cmd_attribute(cfg, ws);
                neuronlab::cmd_intervene(cfg, ws);
                neuronlab::cmd_eval(cfg, ws);
                neuronlab::cmd_report(cfg, ws);
            });
        });
    }

    try {
        app.parse(argc, argv);
        for (auto& fn : pending) fn();
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::fprintf(stderr, "%s\n", e.what());
        return 1;
    } catch (const neuronlab::UsageError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    } catch (const neuronlab::MissingArtifactError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const neuronlab::StaleArtifactError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const neuronlab::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    }
    return 0;
}
