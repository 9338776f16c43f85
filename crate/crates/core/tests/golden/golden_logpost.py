"""Brute-force golden values written directly from the model equations with
scipy; shares no code with the Rust implementation. Run from this directory
to regenerate the JSON files:

- `logpost_1p3s.json`: full log posterior of a one-person, three-swab
  instance with sgRNA, DBS and covariates.
- `logprior_2p.json`: log prior of a two-person state whose observed peaks
  fall at the start and at the end of follow-up.
"""

import json
import math

import numpy as np
from scipy import special, stats

LOD, LOD_SG, LOQ = 2.4, 2.4, 4.9
FP_OFFSET, FP_SD = 0.5, 0.5

instance = {
    "person_id": "G01",
    "covariate_names": ["age"],
    "covariates": [0.3],
    "wiring": {"x_vp": ["age"], "x_wa": [], "x_wb": [], "x_c": ["peak_vp"]},
    # (day, y_diag, y_sg or None)
    "swabs": [[3, 4.1, 2.4], [5, 7.3, 5.1], [8, 5.6, 3.3]],
    "dbs": [[1, False], [14, True]],
}

state = {
    "person": {"v_p": 5.0, "w_a": 3.5, "w_b": 9.0, "t_p": 0.3, "t_d": 0.8, "w_d": 6.5, "q": 0.7},
    "pop": {
        "mu_lvp": 1.7, "mu_lwa": 1.3, "mu_lwb": 2.3,
        "sigma_log": [[0.02, 0.005, 0.003], [0.005, 0.09, 0.01], [0.003, 0.01, 0.04]],
        "beta_vp": [0.1], "beta_wa": [], "beta_wb": [],
        "alpha0": -5.3, "alpha1": 7.7, "alpha0_sg": -5.5, "alpha1_sg": 7.6,
        "sigma_yy": 0.5, "delta_q": 0.25, "sigma_y_sg": 0.45,
        "mu_td": 0.5, "mu_lwd": 1.4, "sigma_lwd": 0.2,
        "gamma1": 2.7, "gamma2": 1.5,
        "beta_c0": 1.1, "beta_c": [0.2],
        "kappa1": 2.3, "kappa2": 0.16,
    },
}

# default prior hyperparameters
PRIOR = {
    "mu_lvp": (math.log(5.5), 0.5), "mu_lwa": (math.log(4.0), 0.5), "mu_lwb": (math.log(10.0), 0.5),
    "mu_lwd": (math.log(4.0), 0.5), "mu_td": (0.5, 1.0),
    "iw_nu": 5.0, "iw_scale": 0.1 * np.eye(3), "beta_sd": 1.0, "beta_c0": (0.0, 1.5),
    "alpha0": (-5.3, 0.5), "alpha1": (7.7, 1.0), "alpha0_sg": (-5.3, 0.5), "alpha1_sg": (7.7, 1.0),
    "delta_q": (2.0, 6.0), "gamma1": (2.0, 1.0), "gamma2": (2.0, 1.0), "kappa1": (4.0, 1.0), "kappa2": (4.0, 10.0),
    "sigma_yy": 1.0, "sigma_y_sg": 1.0, "sigma_lwd": 0.5, "td_sd": 2.0, "sigma_tp": 1.0,
}


def expit(x):
    return 1.0 / (1.0 + math.exp(-x))


def tn_logpdf(x, mu, sd, lo, hi):
    a, b = (lo - mu) / sd, (hi - mu) / sd
    return stats.truncnorm.logpdf(x, a, b, loc=mu, scale=sd)


def gamma_logpdf(x, shape, rate):
    return stats.gamma.logpdf(x, shape, scale=1.0 / rate)


def hyperprior(p):
    lp = 0.0
    for k in ["mu_lvp", "mu_lwa", "mu_lwb", "mu_lwd", "mu_td", "beta_c0", "alpha0", "alpha1", "alpha0_sg", "alpha1_sg"]:
        m, s = PRIOR[k]
        lp += stats.norm.logpdf(p[k], m, s)
    lp += stats.invwishart.logpdf(np.array(p["sigma_log"]), df=PRIOR["iw_nu"], scale=PRIOR["iw_scale"])
    for b in p["beta_vp"] + p["beta_wa"] + p["beta_wb"] + p["beta_c"]:
        lp += stats.norm.logpdf(b, 0.0, PRIOR["beta_sd"])
    lp += stats.beta.logpdf(p["delta_q"], *PRIOR["delta_q"])
    for k in ["gamma1", "gamma2", "kappa1", "kappa2"]:
        lp += gamma_logpdf(p[k], *PRIOR[k])
    for k in ["sigma_yy", "sigma_y_sg", "sigma_lwd"]:
        lp += stats.halfcauchy.logpdf(p[k], scale=PRIOR[k])
    return lp


def tp_logprior(t_p, peak_day, first, last, edge=2):
    if peak_day < first + edge:
        return tn_logpdf(t_p, -0.5, 1.0, -np.inf, 1.0)
    if peak_day > last - edge:
        return tn_logpdf(t_p, 0.5, 1.0, -1.0, np.inf)
    return stats.norm.logpdf(t_p, 0.0, PRIOR["sigma_tp"])


def person_prior(x, p, shift_lvp, swabs):
    logs = np.log([x["v_p"], x["w_a"], x["w_b"]])
    mean = [p["mu_lvp"] + shift_lvp, p["mu_lwa"], p["mu_lwb"]]
    lp = stats.multivariate_normal.logpdf(logs, mean=mean, cov=np.array(p["sigma_log"])) - logs.sum()
    days = [r[0] for r in swabs]
    peak_day = max(swabs, key=lambda r: r[1])[0]
    lp += tp_logprior(x["t_p"], peak_day, min(days), max(days))
    lp += tn_logpdf(x["t_d"], p["mu_td"], PRIOR["td_sd"], -x["w_a"], x["w_b"])
    lwd = math.log(x["w_d"])
    lp += tn_logpdf(lwd, p["mu_lwd"], p["sigma_lwd"], 0.0, math.log(x["w_b"] - x["t_d"])) - lwd
    lp += stats.beta.logpdf(x["q"], p["gamma1"], p["gamma2"])
    return lp


def swab_loglik(x, p, ref_peak):
    diag = sg = 0.0
    wa2 = x["w_a"] + x["t_d"]
    wb2 = x["w_b"] - x["t_d"] - x["w_d"]
    vp2 = x["q"] * x["v_p"]
    for day, y, ysg in instance["swabs"]:
        s = day - ref_peak - x["t_p"]
        shed = -x["w_a"] <= s <= x["w_b"]
        ptrue = expit(p["alpha0"] + (p["alpha1"] if shed else 0.0))
        positive = y > LOD
        if not positive:
            diag += math.log(1 - ptrue)
            continue
        diag += math.log(ptrue)
        if shed:
            mu = LOD + x["v_p"] * (1 + s / x["w_a"] if s <= 0 else 1 - s / x["w_b"])
            var = p["sigma_yy"] ** 2 * (1 + p["delta_q"] * (y < LOQ))
            diag += stats.norm.logpdf(y, mu, math.sqrt(var))
        else:
            diag += stats.norm.logpdf(y, LOD + FP_OFFSET, FP_SD)
        if ysg is None:
            continue
        s2 = s - x["t_d"]
        shed2 = -wa2 <= s2 <= wb2
        psg = expit(p["alpha0_sg"] + (p["alpha1_sg"] if shed2 else 0.0))
        if ysg <= LOD_SG:
            sg += math.log(1 - psg)
        elif shed2:
            mu2 = LOD_SG + vp2 * (1 + s2 / wa2 if s2 <= 0 else 1 - s2 / wb2)
            sg += math.log(psg) + stats.norm.logpdf(ysg, mu2, p["sigma_y_sg"])
        else:
            sg += math.log(psg) + stats.norm.logpdf(ysg, LOD_SG + FP_OFFSET, FP_SD)
    return diag, sg


def sero_loglik(x, p, ref_peak):
    onset = ref_peak + x["t_p"] - x["w_a"]
    eta = p["beta_c0"] + p["beta_c"][0] * x["v_p"]
    prob = expit(eta)
    # DBS negative on day 1, positive on day 14: interval censored
    F = lambda day: special.gammainc(p["kappa1"], p["kappa2"] * max(day - onset, 0.0))
    return math.log(prob * (F(14) - F(1)))


def main():
    x, p = state["person"], state["pop"]
    ref_peak = max(instance["swabs"], key=lambda r: r[1])[0]
    shift = p["beta_vp"][0] * instance["covariates"][0]
    terms = {"hyperprior": hyperprior(p), "person_prior": person_prior(x, p, shift, instance["swabs"])}
    terms["diag_swabs"], terms["sg_swabs"] = swab_loglik(x, p, ref_peak)
    terms["sero"] = sero_loglik(x, p, ref_peak)
    total = sum(terms.values())
    with open("logpost_1p3s.json", "w") as f:
        record = {"instance": instance, "state": {"pop": p, "persons": [x]}, "terms": terms, "log_posterior": total}
        json.dump(record, f, indent=2)
        f.write("\n")
    print(json.dumps(terms, indent=2), total)

    # two persons, no covariates: early and late observed peaks
    pop = dict(p, beta_vp=[], beta_c=[])
    persons = [
        {"id": "E01", "swabs": [[1, 6.2, None], [2, 7.9, None], [3, 7.1, None], [4, 6.0, None], [5, 4.4, None], [6, 2.4, None]]},
        {"id": "L01", "swabs": [[d, 2.4 if d < 3 else 2.4 + 0.9 * (d - 2), None] for d in range(1, 8)] + [[8, 6.1, None]]},
    ]
    states = [
        {"v_p": 5.6, "w_a": 2.2, "w_b": 6.5, "t_p": 0.4, "t_d": -0.3, "w_d": 2.0, "q": 0.55},
        {"v_p": 4.9, "w_a": 5.1, "w_b": 11.0, "t_p": -0.6, "t_d": 1.7, "w_d": 3.1, "q": 0.8},
    ]
    prior_terms = [person_prior(x2, pop, 0.0, per["swabs"]) for x2, per in zip(states, persons)]
    total = hyperprior(pop) + sum(prior_terms)
    with open("logprior_2p.json", "w") as f:
        record = {"persons": persons, "state": {"pop": pop, "persons": states}, "person_priors": prior_terms, "log_prior": total}
        json.dump(record, f, indent=2)
        f.write("\n")
    print(prior_terms, total)


if __name__ == "__main__":
    main()
