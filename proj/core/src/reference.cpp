#include "sdcore/reference.hpp"

#include <fstream>
#include <sstream>

#include "sdcore/parser.hpp"

namespace sd {

namespace {

std::string read_file(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    if (!in) throw std::runtime_error("reference bundle: cannot open '" + p.string() + "'");
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

OverrideSet load_overrides(const std::filesystem::path& p) {
    auto parsed = parse_override_set(read_file(p));
    if (auto* err = std::get_if<ParseError>(&parsed))
        throw std::runtime_error(p.string() + ": " + err->to_string());
    return std::get<OverrideSet>(parsed);
}

void cross_check(const Model& model, const OverrideSet& overrides,
                 const std::filesystem::path& p) {
    try {
        apply_overrides(model, overrides);
    } catch (const std::invalid_argument& e) {
        throw std::runtime_error(p.string() + ": " + e.what());
    }
}

FixtureTable load_fixture(const std::filesystem::path& p) {
    std::string text = read_file(p);
    std::istringstream in(text);
    std::string line;
    if (!std::getline(in, line) || line != "month,selfservice,traditional")
        throw std::runtime_error(p.string() + ": expected header 'month,selfservice,traditional'");
    FixtureTable out;
    int line_no = 1;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        std::istringstream cells(line);
        std::string m, s, t;
        if (!std::getline(cells, m, ',') || !std::getline(cells, s, ',') ||
            !std::getline(cells, t))
            throw std::runtime_error(p.string() + ":" + std::to_string(line_no) +
                                     ": expected 'month,selfservice,traditional'");
        try {
            out.months.push_back(std::stod(m));
            out.selfservice.push_back(std::stod(s));
            out.traditional.push_back(std::stod(t));
        } catch (const std::exception&) {
            throw std::runtime_error(p.string() + ":" + std::to_string(line_no) +
                                     ": malformed number");
        }
    }
    if (out.months.size() != 60)
        throw std::runtime_error(p.string() + ": expected 60 monthly rows, got " +
                                 std::to_string(out.months.size()));
    return out;
}

}  // namespace

ReferenceBundle load_reference(const std::filesystem::path& dir) {
    ReferenceBundle bundle;

    auto model_path = dir / kModelFile;
    auto parsed = parse_model(read_file(model_path));
    if (auto* err = std::get_if<ParseError>(&parsed))
        throw std::runtime_error(model_path.string() + ": " + err->to_string());
    bundle.model = std::get<Model>(parsed);
    if (auto diags = validate_model(bundle.model); !diags.empty())
        throw std::runtime_error(model_path.string() + ": " + diags.front().message);

    bundle.traditional = load_overrides(dir / kTraditionalFile);
    bundle.selfservice = load_overrides(dir / kSelfServiceFile);
    bundle.scenario1 = load_overrides(dir / kScenario1File);
    bundle.scenario2 = load_overrides(dir / kScenario2File);
    bundle.scenario3 = load_overrides(dir / kScenario3File);
    bundle.calibrated = load_overrides(dir / kCalibratedFile);

    cross_check(bundle.model, bundle.traditional, dir / kTraditionalFile);
    cross_check(bundle.model, bundle.selfservice, dir / kSelfServiceFile);
    cross_check(bundle.model, bundle.scenario1, dir / kScenario1File);
    cross_check(bundle.model, bundle.scenario2, dir / kScenario2File);
    cross_check(bundle.model, bundle.scenario3, dir / kScenario3File);
    cross_check(bundle.model, bundle.calibrated, dir / kCalibratedFile);

    bundle.fixture = load_fixture(dir / kFixtureFile);
    return bundle;
}

}  // namespace sd
