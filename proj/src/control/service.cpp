#include "robin/control.hpp"

#include "robin/coder.hpp"
#include "robin/repeater.hpp"

#include <algorithm>

namespace robin::control {

namespace {

using json = nlohmann::json;

[[noreturn]] void schema(const std::string& what) {
    throw Error(ErrorCode::schema_violation, what);
}

const json& require_object(const json& p) {
    if (!p.is_object()) schema("payload must be an object");
    return p;
}

std::string str(const json& p, const char* key) {
    if (!p.contains(key) || !p[key].is_string()) schema(std::string("payload.") + key + " must be a string");
    return p[key].get<std::string>();
}

std::string str_or(const json& p, const char* key, std::string fallback) {
    if (!p.contains(key) || p[key].is_null()) return fallback;
    return str(p, key);
}

// Byte inputs arrive as <base>_hex, <base>_b64 or plain UTF-8 <base>.
std::string bytes_in(const json& p, const std::string& base) {
    try {
        if (p.contains(base + "_hex")) return coder::from_hex(str(p, (base + "_hex").c_str()));
        if (p.contains(base + "_b64"))
            return coder::transform(coder::Codec::base64, coder::Direction::decode, str(p, (base + "_b64").c_str()));
    } catch (const Error& e) {
        if (e.code() == ErrorCode::invalid_encoding) schema(base + ": " + e.what());
        throw;
    }
    if (p.contains(base)) return str(p, base.c_str());
    schema("payload needs " + base + ", " + base + "_hex or " + base + "_b64");
}

void bytes_out(json& out, const std::string& base, const std::string& bytes) {
    out[base + "_hex"] = coder::to_hex(bytes);
    if (is_valid_utf8(bytes)) out[base] = bytes;
}

void require_id(const json& p, const char* key) {
    if (!p.contains(key) || !p[key].is_number_integer() || p[key].get<std::int64_t>() <= 0)
        schema(std::string("payload.") + key + " must be a positive integer");
}

coder::Direction direction_of(const json& p) {
    auto d = str_or(p, "direction", "encode");
    if (d == "encode") return coder::Direction::encode;
    if (d == "decode") return coder::Direction::decode;
    schema("direction must be encode or decode");
}

using OfflineHandlers = std::map<std::string, std::function<json(const json&)>, std::less<>>;

// Commands that need no proxy, CA or history.
const OfflineHandlers& offline_handlers() {
    static const OfflineHandlers handlers = [] {
        OfflineHandlers h;
        h["ping"] = [](const json&) { return json{{"version", kProtocolVersion}, {"server", "robin"}}; };
        h["coder.transform"] = [](const json& p) {
            auto codec = coder::parse_codec(str(p, "codec"));
            if (!codec) schema("unknown codec '" + str(p, "codec") + "'");
            json out = json::object();
            bytes_out(out, "output", coder::transform(*codec, direction_of(p), bytes_in(p, "input")));
            return out;
        };
        h["coder.digest"] = [](const json& p) {
            auto scheme = coder::parse_digest(str(p, "scheme"));
            if (!scheme) schema("unknown digest scheme '" + str(p, "scheme") + "'");
            return json{{"scheme", std::string(coder::to_string(*scheme))}, {"hex", coder::digest(*scheme, bytes_in(p, "input"))}};
        };
        h["coder.cipher"] = [](const json& p) {
            coder::CipherSpec spec;
            auto alg = str_or(p, "algorithm", "aes128");
            if (alg == "aes128") spec.algorithm = coder::CipherSpec::Algorithm::aes128;
            else if (alg == "aes256") spec.algorithm = coder::CipherSpec::Algorithm::aes256;
            else schema("algorithm must be aes128 or aes256");
            auto mode = str_or(p, "mode", "cbc");
            if (mode == "cbc") spec.mode = coder::CipherSpec::Mode::cbc;
            else if (mode == "gcm") spec.mode = coder::CipherSpec::Mode::gcm;
            else schema("mode must be cbc or gcm");
            spec.key = bytes_in(p, "key");
            spec.iv = bytes_in(p, "iv");
            json out = json::object();
            bytes_out(out, "output", coder::cipher(spec, direction_of(p), bytes_in(p, "input")));
            return out;
        };
        h["coder.xor"] = [](const json& p) {
            json out = json::object();
            bytes_out(out, "output", coder::xor_combine(bytes_in(p, "a"), bytes_in(p, "b")));
            return out;
        };
        h["coder.crib"] = [](const json& p) {
            auto hits = coder::crib_drag(bytes_in(p, "xored"), bytes_in(p, "crib"),
                                         p.value("threshold", coder::kCribPrintableThreshold));
            json arr = json::array();
            for (const auto& hit : hits) {
                json e = {{"offset", hit.offset}, {"printable_score", hit.printable_score}};
                bytes_out(e, "fragment", hit.fragment);
                arr.push_back(e);
            }
            return json{{"hits", arr}};
        };
        h["coder.crack"] = [](const json& p) {
            coder::CrackJob job;
            job.target_hex = str(p, "digest");
            auto scheme = coder::parse_digest(str_or(p, "scheme", "md5"));
            if (!scheme) schema("unknown digest scheme");
            job.scheme = *scheme;
            job.wordlist = str(p, "wordlist");
            if (p.contains("rules")) {
                job.rules.clear();
                for (const auto& r : p["rules"]) {
                    auto m = coder::parse_mangle(r.get<std::string>());
                    if (!m) schema("unknown rule " + r.dump());
                    job.rules.push_back(*m);
                }
            }
            auto res = coder::crack_digest(job);
            json out = {{"found", res.hit.has_value()}, {"candidates_tried", res.candidates_tried}};
            if (res.hit) {
                out["word"] = res.hit->word;
                out["line"] = res.hit->line;
                out["rule"] = std::string(coder::to_string(res.hit->rule));
            }
            return out;
        };
        return h;
    }();
    return handlers;
}

} // namespace

json call_offline(std::string_view type, const json& payload) {
    auto it = offline_handlers().find(type);
    if (it == offline_handlers().end())
        throw Error(ErrorCode::unknown_type, "unknown offline command type '" + std::string(type) + "'");
    try {
        return it->second(require_object(payload));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_violation, std::string("bad payload: ") + e.what());
    }
}

ControlMessage parse_message(const json& j) {
    if (!j.is_object()) schema("message must be a JSON object");
    ControlMessage m;
    if (j.contains("v")) {
        if (!j["v"].is_number_integer()) schema("v must be an integer");
        m.v = j["v"].get<int>();
        if (m.v != kProtocolVersion) schema("unsupported protocol version " + std::to_string(m.v));
    }
    if (!j.contains("type") || !j["type"].is_string()) schema("type must be a string");
    m.type = j["type"].get<std::string>();
    if (j.contains("id")) {
        if (j["id"].is_string()) m.id = j["id"].get<std::string>();
        else if (j["id"].is_number()) m.id = j["id"].dump();
        else schema("id must be a string");
    }
    if (j.contains("payload") && !j["payload"].is_null()) {
        if (!j["payload"].is_object()) schema("payload must be an object");
        m.payload = j["payload"];
    }
    return m;
}

json to_json(const ControlMessage& m) {
    return {{"v", m.v}, {"type", m.type}, {"id", m.id}, {"payload", m.payload}};
}

json error_payload(const Error& e) {
    json p = {{"code", std::string(to_string(e.code()))}, {"message", e.what()}};
    if (auto* ce = dynamic_cast<const CommandError*>(&e))
        for (const auto& [k, v] : ce->detail().items()) p[k] = v;
    return p;
}

int http_status(ErrorCode code) noexcept {
    switch (code) {
    case ErrorCode::ok: return 200;
    case ErrorCode::not_found:
    case ErrorCode::not_pending:
    case ErrorCode::missing_wiki_entry: return 404;
    case ErrorCode::origin_not_allowed: return 403;
    case ErrorCode::base_unreachable:
    case ErrorCode::network_error:
    case ErrorCode::upstream_tls_failure: return 502;
    case ErrorCode::timeout: return 504;
    case ErrorCode::internal:
    case ErrorCode::io_error:
    case ErrorCode::ca_unavailable:
    case ErrorCode::corrupt_ca_files:
    case ErrorCode::directory_unwritable: return 500;
    case ErrorCode::address_in_use: return 409;
    default: return 400;
    }
}

Service::Service(ServiceOptions options) : options_(std::move(options)) {
    try {
        ca_ = ca::CertAuthority::init(options_.ca_dir);
    } catch (const Error& e) {
        throw Error(ErrorCode::ca_unavailable, std::string("certificate authority unavailable: ") + e.what());
    }
    wiki_ = options_.wiki_dir ? wiki::WikiCatalog::load(*options_.wiki_dir) : wiki::WikiCatalog::bundled();
    scanner::assert_catalog_closure(wiki_);
    allow_ = client::OriginAllowList(options_.allow_origins);
    engine_ = std::make_unique<intercept::InterceptEngine>(bus_, options_.engine);
    if (!options_.session_out.empty())
        engine_->set_session_writer(std::make_shared<intercept::SessionWriter>(options_.session_out));
    requester_ = std::make_unique<client::HttpRequester>(engine_.get(), options_.requester);
    engine_->on_finished([this](const ExchangeRecord& r) {
        if (options_.passive_on_traffic)
            for (const auto& f : scanner::passive_scan(r)) record_finding(f, std::nullopt);
        std::vector<std::function<void(const ExchangeRecord&)>> listeners;
        {
            std::lock_guard lock(mu_);
            listeners = finished_listeners_;
        }
        for (const auto& l : listeners) l(r);
    });
    engine_->start_sweeper();
    register_handlers();
}

Service::~Service() {
    shutdown();
}

void Service::shutdown() {
    {
        std::lock_guard lock(mu_);
        for (auto& [id, flag] : jobs_) flag->store(true);
    }
    stop_proxy();
    if (engine_) {
        engine_->stop_sweeper();
        engine_->shutdown();
    }
}

proxy::ProxyHandle& Service::start_proxy(proxy::ProxyConfig config) {
    if (proxy_) throw Error(ErrorCode::invalid_argument, "proxy already running");
    proxy_ = proxy::start_proxy(config, ca_, *engine_);
    return *proxy_;
}

void Service::stop_proxy() {
    if (proxy_) {
        // Paused exchanges would otherwise hold the drain for idle_timeout.
        engine_->shutdown();
        proxy_->stop();
        proxy_.reset();
    }
}

std::vector<scanner::ScanFinding> Service::findings() const {
    std::lock_guard lock(mu_);
    return findings_;
}

void Service::on_exchange_finished(std::function<void(const ExchangeRecord&)> callback) {
    std::lock_guard lock(mu_);
    finished_listeners_.push_back(std::move(callback));
}

void Service::record_finding(const scanner::ScanFinding& f, std::optional<std::uint64_t> job_id) {
    {
        std::lock_guard lock(mu_);
        if (!finding_ids_.insert(f.finding_id).second) return;
        findings_.push_back(f);
    }
    json p = {{"finding", scanner::to_json(f)}};
    if (job_id) p["job_id"] = *job_id;
    bus_.publish(EventKind::finding_emitted, std::move(p));
}

std::uint64_t Service::begin_job(std::shared_ptr<std::atomic<bool>> cancel) {
    std::lock_guard lock(mu_);
    auto id = next_job_++;
    jobs_[id] = std::move(cancel);
    return id;
}

void Service::end_job(std::uint64_t id) {
    std::lock_guard lock(mu_);
    jobs_.erase(id);
}

const std::vector<std::string>& Service::command_types() {
    static const std::vector<std::string> types = {
        "ping",          "coder.transform", "coder.digest",   "coder.cipher",     "coder.xor",
        "coder.crib",    "coder.crack",     "rules.set",      "rules.get",        "pending.list",
        "resume",        "history.query",   "history.get",    "har.export",       "scan.passive",
        "scan.enumerable", "scan.active",   "scan.explain",   "findings.list",    "repeater.parse",
        "repeater.run",  "job.cancel",      "wiki.list",      "wiki.get",         "ca.pem"};
    return types;
}

json Service::call(std::string_view type, const json& payload) {
    auto it = handlers_.find(type);
    if (it == handlers_.end()) throw Error(ErrorCode::unknown_type, "unknown command type '" + std::string(type) + "'");
    try {
        return it->second(require_object(payload));
    } catch (const json::exception& e) {
        throw Error(ErrorCode::schema_violation, std::string("bad payload: ") + e.what());
    }
}

ControlMessage Service::dispatch(const ControlMessage& command) {
    ControlMessage reply;
    reply.id = command.id;
    try {
        reply.payload = call(command.type, command.payload);
        reply.type = "reply";
    } catch (const Error& e) {
        reply.type = "error";
        reply.payload = error_payload(e);
    } catch (const std::exception& e) {
        reply.type = "error";
        reply.payload = {{"code", std::string(to_string(ErrorCode::internal))}, {"message", e.what()}};
    }
    return reply;
}

void Service::register_handlers() {
    auto& h = handlers_;
    for (const auto& [type, fn] : offline_handlers()) h[type] = fn;

    h["rules.set"] = [this](const json& p) {
        if (!p.contains("rules") || !p["rules"].is_array()) schema("payload.rules must be an array");
        std::vector<intercept::InterceptRule> rules;
        for (std::size_t i = 0; i < p["rules"].size(); ++i) {
            try {
                rules.push_back(intercept::rule_from_json(p["rules"][i]));
            } catch (const Error& e) {
                throw CommandError(ErrorCode::schema_violation, "rule " + std::to_string(i) + ": " + e.what(),
                                   {{"index", i}, {"cause", std::string(to_string(e.code()))}});
            }
        }
        engine_->set_rules(rules);
        return json{{"count", rules.size()}};
    };
    h["rules.get"] = [this](const json&) {
        json arr = json::array();
        for (const auto& r : engine_->rules()) arr.push_back(intercept::to_json(r));
        return json{{"rules", arr}};
    };
    h["pending.list"] = [this](const json&) {
        json arr = json::array();
        for (const auto& pe : engine_->pending()) arr.push_back(intercept::to_json(pe));
        return json{{"pending", arr}};
    };
    h["resume"] = [this](const json& p) {
        require_id(p, "exchange_id");
        ExchangeId id = p["exchange_id"].get<ExchangeId>();
        std::optional<intercept::Direction> dir;
        if (p.contains("direction")) {
            dir = intercept::parse_direction(str(p, "direction"));
            if (!dir) schema("direction must be request or response");
        } else {
            for (const auto& pe : engine_->pending())
                if (pe.exchange_id == id) dir = pe.direction;
            if (!dir) throw Error(ErrorCode::not_pending, "exchange " + std::to_string(id) + " is not paused");
        }
        auto action = str_or(p, "action", "forward");
        if (action == "forward") {
            engine_->resume(id, *dir, intercept::EditAction::forward());
        } else if (action == "drop") {
            engine_->resume(id, *dir, intercept::EditAction::drop());
        } else if (action == "edit") {
            if (p.contains("raw") || p.contains("raw_hex") || p.contains("raw_b64")) {
                engine_->resume_raw(id, *dir, bytes_in(p, "raw"));
            } else if (p.contains("message")) {
                try {
                    if (*dir == intercept::Direction::request)
                        engine_->resume(id, *dir, intercept::EditAction::edited(request_from_json(p["message"])));
                    else
                        engine_->resume(id, *dir, intercept::EditAction::edited(response_from_json(p["message"])));
                } catch (const json::exception& e) {
                    throw Error(ErrorCode::invalid_edited_message, std::string("bad message: ") + e.what());
                }
            } else {
                schema("edit needs raw, raw_hex, raw_b64 or message");
            }
        } else {
            schema("action must be forward, drop or edit");
        }
        return json{{"exchange_id", id}, {"direction", std::string(intercept::to_string(*dir))}, {"action", action}};
    };

    h["history.query"] = [this](const json& p) {
        auto filter = intercept::filter_from_json(p.value("filter", p));
        bool full = p.value("full", false);
        json arr = json::array();
        if (full)
            for (const auto& r : engine_->history().query(filter)) arr.push_back(robin::to_json(r));
        else
            for (const auto& s : engine_->history().summaries(filter)) arr.push_back(robin::to_json(s));
        return json{{"exchanges", arr}};
    };
    h["history.get"] = [this](const json& p) {
        require_id(p, "exchange_id");
        auto id = p["exchange_id"].get<ExchangeId>();
        auto r = engine_->history().get(id);
        if (!r) throw Error(ErrorCode::not_found, "no exchange " + std::to_string(id));
        return robin::to_json(*r);
    };
    h["har.export"] = [this](const json& p) {
        auto filter = intercept::filter_from_json(p.value("filter", p));
        return intercept::export_har(engine_->history().query(filter));
    };

    h["scan.passive"] = [this](const json& p) {
        std::vector<ExchangeRecord> records;
        if (p.contains("exchange_ids")) {
            for (const auto& id : p["exchange_ids"]) {
                auto r = engine_->history().get(id.get<ExchangeId>());
                if (!r) throw Error(ErrorCode::not_found, "no exchange " + id.dump());
                records.push_back(*r);
            }
        } else {
            records = engine_->history().query(intercept::filter_from_json(p.value("filter", p)));
        }
        json arr = json::array();
        for (const auto& r : records)
            for (const auto& f : scanner::passive_scan(r)) {
                record_finding(f, std::nullopt);
                arr.push_back(scanner::to_json(f));
            }
        return json{{"findings", arr}};
    };
    h["scan.enumerable"] = [this](const json& p) {
        auto records = engine_->history().query(intercept::filter_from_json(p.value("filter", p)));
        json arr = json::array();
        for (const auto& f : scanner::detect_enumerable_id(records)) {
            record_finding(f, std::nullopt);
            arr.push_back(scanner::to_json(f));
        }
        return json{{"findings", arr}};
    };
    h["scan.active"] = [this](const json& p) {
        scanner::ActiveScanJob job;
        job.base_url = str(p, "base_url");
        job.max_pages = p.value("max_pages", job.max_pages);
        if (p.contains("probes")) job.probes = p["probes"].get<std::set<std::string>>();
        job.politeness_delay = std::chrono::milliseconds(p.value("politeness_delay_ms", 0));
        auto cancel = std::make_shared<std::atomic<bool>>(false);
        auto job_id = begin_job(cancel);
        scanner::ActiveScanHooks hooks;
        hooks.cancelled = [cancel] { return cancel->load(); };
        hooks.on_finding = [this, job_id](const scanner::ScanFinding& f) { record_finding(f, job_id); };
        hooks.on_progress = [this, job_id](std::size_t pages, std::size_t probes) {
            bus_.publish(EventKind::job_progress,
                         {{"job_id", job_id}, {"kind", "scan"}, {"pages_visited", pages}, {"probes_fired", probes}});
        };
        try {
            auto report = scanner::active_scan(job, *requester_, allow_, hooks);
            auto out = scanner::to_json(report);
            out["job_id"] = job_id;
            out["cancelled"] = cancel->load();
            bus_.publish(EventKind::job_done, {{"job_id", job_id},
                                               {"kind", "scan"},
                                               {"ok", true},
                                               {"findings", report.findings.size()},
                                               {"pages_visited", report.pages_visited}});
            end_job(job_id);
            return out;
        } catch (const Error& e) {
            bus_.publish(EventKind::job_done, {{"job_id", job_id}, {"kind", "scan"}, {"ok", false}, {"error", error_payload(e)}});
            end_job(job_id);
            throw;
        }
    };
    h["scan.explain"] = [this](const json& p) {
        scanner::ScanFinding f;
        if (p.contains("finding")) f = scanner::finding_from_json(p["finding"]);
        else f.wiki_key = str(p, "wiki_key");
        return wiki::to_json(scanner::explain(f, wiki_));
    };
    h["findings.list"] = [this](const json&) {
        json arr = json::array();
        for (const auto& f : findings()) arr.push_back(scanner::to_json(f));
        return json{{"findings", arr}};
    };

    h["repeater.parse"] = [](const json& p) {
        std::string raw = p.contains("template")
                              ? coder::transform(coder::Codec::base64, coder::Direction::decode, str(p, "template"))
                              : bytes_in(p, "template_raw");
        auto scheme = str_or(p, "scheme", "http") == "https" ? http::Scheme::https : http::Scheme::http;
        auto t = repeater::parse_template(raw, scheme);
        json markers = json::array();
        for (const auto& m : t.markers) markers.push_back({{"name", m.name}, {"offset", m.offset}, {"length", m.length}});
        json out = {{"markers", markers}};
        if (t.markers.empty()) out["warning"] = {{"code", std::string(to_string(ErrorCode::no_markers))}, {"message", "template has no {{name}} markers"}};
        return out;
    };
    h["repeater.run"] = [this](const json& p) {
        auto job = repeater::job_from_json(p.value("job", p));
        auto cancel = std::make_shared<std::atomic<bool>>(false);
        auto job_id = begin_job(cancel);
        repeater::RunHooks hooks;
        hooks.cancelled = [cancel] { return cancel->load(); };
        hooks.on_result = [this, job_id](const repeater::AttemptResult& a, std::size_t done, std::size_t total) {
            bus_.publish(EventKind::job_progress, {{"job_id", job_id},
                                                   {"kind", "repeater"},
                                                   {"done", done},
                                                   {"total", total},
                                                   {"result", repeater::to_json(a)}});
        };
        try {
            auto res = repeater::run(job, *requester_, allow_, hooks);
            auto out = repeater::to_json(res);
            out["job_id"] = job_id;
            if (p.value("format", std::string("json")) == "csv") out["csv"] = repeater::to_csv(res);
            bus_.publish(EventKind::job_done, {{"job_id", job_id},
                                               {"kind", "repeater"},
                                               {"ok", true},
                                               {"issued", res.results.size()},
                                               {"stopped_early", res.stopped_early}});
            end_job(job_id);
            return out;
        } catch (const Error& e) {
            bus_.publish(EventKind::job_done,
                         {{"job_id", job_id}, {"kind", "repeater"}, {"ok", false}, {"error", error_payload(e)}});
            end_job(job_id);
            throw;
        }
    };
    h["job.cancel"] = [this](const json& p) {
        auto id = p.at("job_id").get<std::uint64_t>();
        std::lock_guard lock(mu_);
        auto it = jobs_.find(id);
        if (it == jobs_.end()) throw Error(ErrorCode::not_found, "no running job " + std::to_string(id));
        it->second->store(true);
        return json{{"job_id", id}, {"cancelled", true}};
    };

    h["wiki.list"] = [this](const json&) {
        json arr = json::array();
        for (const auto& [k, e] : wiki_.entries()) arr.push_back(wiki::to_json(e));
        return json{{"entries", arr}};
    };
    h["wiki.get"] = [this](const json& p) {
        auto key = str(p, "key");
        auto e = wiki_.get(key);
        if (!e) throw Error(ErrorCode::not_found, "no wiki entry '" + key + "'");
        return wiki::to_json(*e);
    };
    h["ca.pem"] = [this](const json&) { return json{{"pem", ca_->export_root_pem()}}; };
}

} // namespace robin::control
