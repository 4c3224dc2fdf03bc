"""Regenerate the workload traces and advisory feeds in this directory.

Run from anywhere: python3 generate.py
"""

import hashlib
import json
from pathlib import Path

HERE = Path(__file__).resolve().parent
PHASES = {"mid_start": 2000, "post_start": 8000, "end": 12000}

LICENSES = ["MIT", "BSD-3-Clause", "Apache-2.0", "GPL-2.0-or-later"]


def sha(text):
    return hashlib.sha256(text.encode()).hexdigest()


def component(purl, licence=0):
    body, version = purl.rsplit("@", 1)
    name = body.rsplit("/", 1)[1]
    return {
        "name": name,
        "version": version,
        "type": "library",
        "hashes": {"SHA-256": sha(purl)},
        "licenses": [LICENSES[licence % len(LICENSES)]],
        "purl": purl,
        "supplierName": "CRAN" if purl.startswith("pkg:cran/") else "PyPI",
        "componentOrigin": "upstream-registry",
    }


def phase(at):
    if at < PHASES["mid_start"]:
        return "pre"
    if at < PHASES["post_start"]:
        return "mid"
    return "post"


def event(at, purl, **extra):
    e = {"at": at, "purl": purl, "phase": phase(at)}
    e.update(extra)
    return e


def environment(image, python=None, r=None):
    interp = {}
    if python:
        interp["python"] = python
    if r:
        interp["R"] = r
    return {
        "osKernel": "5.15.0-91-generic",
        "osDistro": "ubuntu:22.04",
        "containerId": sha("container:" + image)[:12],
        "baseImageHash": sha("image:" + image),
        "interpreterVersions": interp,
        "resourceConstraints": {"cpus": "4", "memory": "16Gi"},
        "loadOrder": [],
    }


def workload(
    workload_id,
    declared,
    events,
    *,
    module_type,
    env,
    kind="deterministic",
    seed=7,
    inputs=(),
    installed=(),
    gaps=(),
    historical=None,
    dependencies=(),
    mitigations=(),
    threshold=10.0,
    flags=("pseudonymised",),
):
    declared_c = [component(p, i) for i, p in enumerate(declared)]
    installed_c = [component(p, i + 1) for i, p in enumerate(installed)]
    header = {
        "workload_id": workload_id,
        "environment": env,
        "declared_components": declared_c,
        "installed": installed_c,
        "scan_gaps": list(gaps),
        "historical_baseline": list(declared if historical is None else historical),
        "dependencies": [{"parent": p, "child": c} for p, c in dependencies],
        "phases": PHASES,
        "output_program": {"seed": seed, "kind": kind, "inputs": list(inputs)},
        "params": {
            "module_type": module_type,
            "disclosure_threshold": threshold,
            "min_threshold": 10.0,
            "data_handling_flags": list(flags),
        },
        "mitigations": list(mitigations),
    }
    lines = [json.dumps(header, sort_keys=True)]
    lines += [json.dumps(e, sort_keys=True) for e in events]
    (HERE / "workloads" / f"{workload_id}.jsonl").write_text("\n".join(lines) + "\n")


def anonymisation_sdc():
    declared = [
        "pkg:cran/sdcMicro@5.6.0",
        "pkg:cran/data.table@1.14.8",
        "pkg:cran/dplyr@1.1.3",
        "pkg:cran/ggplot2@3.4.4",
        "pkg:cran/haven@2.5.3",
        "pkg:cran/readr@2.1.4",
        "pkg:cran/tidyr@1.3.0",
        "pkg:cran/stringr@1.5.0",
        "pkg:cran/lubridate@1.9.3",
        "pkg:cran/Rcpp@1.0.11",
        "pkg:cran/MASS@7.3-60",
        "pkg:cran/survey@4.2-1",
        "pkg:cran/knitr@1.45",
        "pkg:cran/jsonlite@1.8.7",
        "pkg:cran/magrittr@2.0.3",
    ]
    historical = ["pkg:cran/sdcMicro@5.5.0"] + declared[1:]
    events = [
        event(100, "pkg:cran/data.table@1.14.8", executed="yes", reachable="yes"),
        event(2500, "pkg:cran/sdcMicro@5.6.0", executed="yes", reachable="yes"),
        event(3100, "pkg:cran/laeken@0.5.3"),
        event(4200, "pkg:cran/VIM@6.2.2"),
        event(9000, "pkg:cran/knitr@1.45"),
    ]
    workload(
        "anonymisation-sdc",
        declared,
        events,
        module_type="r-script",
        env=environment("rocker-r-4.3.2", r="4.3.2"),
        seed=11,
        inputs=["pkg:cran/sdcMicro", "pkg:cran/data.table"],
        installed=["pkg:cran/laeken@0.5.3", "pkg:cran/VIM@6.2.2"],
        historical=historical,
        dependencies=[
            ("pkg:cran/sdcMicro@5.6.0", "pkg:cran/data.table@1.14.8"),
            ("pkg:cran/sdcMicro@5.6.0", "pkg:cran/Rcpp@1.0.11"),
            ("pkg:cran/sdcMicro@5.6.0", "pkg:cran/laeken@0.5.3"),
            ("pkg:cran/dplyr@1.1.3", "pkg:cran/magrittr@2.0.3"),
        ],
        mitigations=[
            {
                "id": "MIT-SANDBOX-01",
                "package": "pkg:cran/data.table",
                "kind": "sandbox-restriction",
                "note": "fread network URLs blocked by the TRE egress sandbox",
            }
        ],
        flags=("pseudonymised", "row-level-suppressed"),
    )


def etl_merge():
    declared = [
        "pkg:pypi/pandas@2.1.1",
        "pkg:pypi/numpy@1.26.0",
        "pkg:pypi/pyarrow@14.0.1",
        "pkg:pypi/sqlalchemy@2.0.23",
        "pkg:pypi/openpyxl@3.1.2",
        "pkg:pypi/python-dateutil@2.8.2",
        "pkg:pypi/pytz@2023.3",
        "pkg:pypi/six@1.16.0",
        "pkg:pypi/et-xmlfile@1.1.0",
        "pkg:pypi/greenlet@3.0.1",
        "pkg:pypi/typing-extensions@4.8.0",
        "pkg:pypi/tzdata@2023.3",
    ]
    events = [
        event(300, "pkg:pypi/pandas@2.1.1", executed="no", reachable="no"),
        event(2100, "pkg:pypi/fastparquet@2023.10.1"),
        event(2150, "pkg:pypi/cramjam@2.7.0"),
        event(5000, "pkg:pypi/pyarrow@14.0.1"),
    ]
    workload(
        "etl-merge",
        declared,
        events,
        module_type="python-notebook",
        env=environment("python-3.11-slim", python="3.11.6"),
        seed=23,
        inputs=["pkg:pypi/pandas", "pkg:pypi/pyarrow"],
        installed=["pkg:pypi/fastparquet@2023.10.1", "pkg:pypi/cramjam@2.7.0"],
        gaps=["pkg:pypi/sqlalchemy@2.0.23", "pkg:pypi/openpyxl@3.1.2"],
        dependencies=[
            ("pkg:pypi/pandas@2.1.1", "pkg:pypi/numpy@1.26.0"),
            ("pkg:pypi/pandas@2.1.1", "pkg:pypi/python-dateutil@2.8.2"),
            ("pkg:pypi/fastparquet@2023.10.1", "pkg:pypi/cramjam@2.7.0"),
            ("pkg:pypi/openpyxl@3.1.2", "pkg:pypi/et-xmlfile@1.1.0"),
        ],
    )


def logit_glm():
    declared = [
        "pkg:pypi/statsmodels@0.14.0",
        "pkg:pypi/numpy@1.26.0",
        "pkg:pypi/scipy@1.11.3",
        "pkg:pypi/patsy@0.5.3",
        "pkg:pypi/pandas@2.1.4",
        "pkg:pypi/packaging@23.2",
        "pkg:pypi/sdc-tools@0.4.2",
        "pkg:pypi/six@1.16.0",
        "pkg:pypi/joblib@1.3.2",
        "pkg:pypi/scikit-learn@1.3.2",
    ]
    events = [
        event(2200, "pkg:pypi/statsmodels@0.14.0", executed="yes", reachable="no"),
        event(3300, "pkg:pypi/threadpoolctl@3.2.0"),
        event(8500, "pkg:pypi/sdc-tools@0.4.2", executed="yes", reachable="yes"),
    ]
    workload(
        "logit-glm",
        declared,
        events,
        module_type="python-script",
        env=environment("python-3.11-slim", python="3.11.6"),
        seed=31,
        inputs=["pkg:pypi/statsmodels", "pkg:pypi/sdc-tools"],
        installed=["pkg:pypi/threadpoolctl@3.2.0"],
        dependencies=[
            ("pkg:pypi/statsmodels@0.14.0", "pkg:pypi/scipy@1.11.3"),
            ("pkg:pypi/statsmodels@0.14.0", "pkg:pypi/patsy@0.5.3"),
            ("pkg:pypi/scikit-learn@1.3.2", "pkg:pypi/threadpoolctl@3.2.0"),
        ],
    )


def late_bind_heavy():
    declared = [
        "pkg:pypi/pyspark@3.5.0",
        "pkg:pypi/py4j@0.10.9.7",
        "pkg:pypi/numpy@1.26.0",
        "pkg:pypi/pandas@2.1.4",
        "pkg:pypi/requests@2.31.0",
        "pkg:pypi/urllib3@2.0.7",
        "pkg:pypi/certifi@2023.11.17",
        "pkg:pypi/idna@3.6",
    ]
    late = [
        "pkg:pypi/pyarrow@14.0.0",
        "pkg:pypi/grpcio@1.59.3",
        "pkg:pypi/protobuf@4.25.1",
        "pkg:pypi/googleapis-common-protos@1.61.0",
        "pkg:pypi/cloudpickle@3.0.0",
        "pkg:pypi/requests@2.32.3",
        "pkg:pypi/zstandard@0.22.0",
    ]
    events = [
        event(500, "pkg:pypi/pyspark@3.5.0"),
        event(2100, "pkg:pypi/pyarrow@14.0.0", anomalous=True, executed="yes", reachable="yes"),
        event(2300, "pkg:pypi/grpcio@1.59.3"),
        event(2350, "pkg:pypi/protobuf@4.25.1"),
        event(2400, "pkg:pypi/googleapis-common-protos@1.61.0"),
        event(3000, "pkg:pypi/cloudpickle@3.0.0"),
        event(4000, "pkg:pypi/requests@2.32.3"),
        event(8200, "pkg:pypi/zstandard@0.22.0"),
    ]
    workload(
        "late-bind-heavy",
        declared,
        events,
        module_type="spark-job",
        env=environment("spark-3.5.0-py311", python="3.11.6"),
        seed=47,
        inputs=["pkg:pypi/pyspark", "pkg:pypi/pyarrow"],
        installed=late,
        dependencies=[
            ("pkg:pypi/pyspark@3.5.0", "pkg:pypi/py4j@0.10.9.7"),
            ("pkg:pypi/pyspark@3.5.0", "pkg:pypi/pyarrow@14.0.0"),
            ("pkg:pypi/requests@2.31.0", "pkg:pypi/urllib3@2.0.7"),
            ("pkg:pypi/grpcio@1.59.3", "pkg:pypi/protobuf@4.25.1"),
        ],
    )


def gpu_late_bind():
    declared = [
        "pkg:pypi/torch@2.1.0",
        "pkg:pypi/numpy@1.26.0",
        "pkg:pypi/filelock@3.13.1",
        "pkg:pypi/sympy@1.12",
        "pkg:pypi/networkx@3.2.1",
        "pkg:pypi/jinja2@3.1.2",
        "pkg:pypi/fsspec@2023.10.0",
        "pkg:pypi/typing-extensions@4.8.0",
    ]
    late = [
        "pkg:pypi/nvidia-cublas-cu12@12.1.3.1",
        "pkg:pypi/nvidia-cudnn-cu12@8.9.2.26",
        "pkg:pypi/nvidia-nccl-cu12@2.18.1",
        "pkg:pypi/triton@2.1.0",
        "pkg:pypi/nvidia-cuda-runtime-cu12@12.1.105",
    ]
    events = [
        event(800, "pkg:pypi/torch@2.1.0"),
        event(2050, "pkg:pypi/nvidia-cuda-runtime-cu12@12.1.105"),
        event(2060, "pkg:pypi/nvidia-cublas-cu12@12.1.3.1"),
        event(2070, "pkg:pypi/nvidia-cudnn-cu12@8.9.2.26"),
        event(2600, "pkg:pypi/triton@2.1.0"),
        event(6000, "pkg:pypi/nvidia-nccl-cu12@2.18.1"),
    ]
    workload(
        "gpu-late-bind",
        declared,
        events,
        module_type="gpu-training",
        env=environment("pytorch-2.1.0-cuda12.1", python="3.10.13"),
        kind="float32-noisy",
        seed=53,
        inputs=["pkg:pypi/torch", "pkg:pypi/nvidia-cudnn-cu12"],
        installed=late,
        dependencies=[
            ("pkg:pypi/torch@2.1.0", "pkg:pypi/triton@2.1.0"),
            ("pkg:pypi/torch@2.1.0", "pkg:pypi/sympy@1.12"),
            ("pkg:pypi/torch@2.1.0", "pkg:pypi/nvidia-cudnn-cu12@8.9.2.26"),
        ],
    )


def missing_components():
    declared = [f"pkg:pypi/tre-lib-{i:02d}@1.0.{i}" for i in range(50)]
    historical = declared + ["pkg:pypi/tre-lib-50@1.0.50", "pkg:pypi/tre-lib-51@1.0.51"]
    workload(
        "missing-components",
        declared,
        [event(2500, "pkg:pypi/tre-lib-07@1.0.7")],
        module_type="python-script",
        env=environment("python-3.11-slim", python="3.11.6"),
        seed=61,
        historical=historical,
    )


def probe_unresolvable():
    declared = [f"pkg:pypi/tre-lib-{i:02d}@1.0.{i}" for i in range(10)]
    historical = declared + [
        "pkg:pypi/legacy-ingest@0.9.0",
        "pkg:pypi/legacy-mask@0.3.1",
        "pkg:pypi/legacy-report@1.2.0",
    ]
    workload(
        "probe-unresolvable",
        declared,
        [event(2500, "pkg:pypi/tre-lib-03@1.0.3")],
        module_type="python-script",
        env=environment("python-3.11-slim", python="3.11.6"),
        seed=67,
        historical=historical,
    )


def tampered_hash():
    declared = [
        "pkg:pypi/numpy@1.26.0",
        "pkg:pypi/pandas@2.1.4",
        "pkg:pypi/scipy@1.11.3",
        "pkg:pypi/six@1.16.0",
    ]
    workload(
        "tampered-hash",
        declared,
        [
            event(2500, "pkg:pypi/scipy@1.11.3", sha256=sha("trojaned scipy wheel")),
        ],
        module_type="python-script",
        env=environment("python-3.11-slim", python="3.11.6"),
        seed=71,
    )


def advisory(id_, package, introduced, fixed, severity, source):
    return {
        "id": id_,
        "affected": [{"package": package, "introduced": introduced, "fixed": fixed}],
        "severity": severity,
        "source": source,
        "csaf_refs": [],
    }


def feeds():
    osv = [
        advisory("CVE-FIX-0001", "pkg:pypi/pyarrow", "0.14.0", "14.0.1", "critical", "osv-mirror"),
        advisory("CVE-FIX-0003", "pkg:pypi/pandas", "2.0.0", "2.1.4", "medium", "osv-mirror"),
        advisory("CVE-FIX-0004", "pkg:cran/data.table", "1.14.0", "1.15.0", "high", "osv-mirror"),
        advisory("CVE-FIX-0005", "pkg:pypi/scipy", "1.10.0", "1.11.4", "high", "osv-mirror"),
    ]
    nvd = [
        advisory("CVE-FIX-0001", "pkg:pypi/pyarrow", "0.14.0", "14.0.1", "critical", "nvd-mirror"),
        advisory("CVE-FIX-0003", "pkg:pypi/pandas", "2.0.0", "2.1.4", "medium", "nvd-mirror"),
        advisory("CVE-FIX-0005", "pkg:pypi/scipy", "1.10.0", "1.11.4", "high", "nvd-mirror"),
    ]
    csaf = {
        "document": {
            "tracking": {"id": "CSAF-TRE-2025-0007"},
            "title": "sdcMicro local suppression bypass",
        },
        "product_tree": {
            "products": [
                {
                    "product_id": "P1",
                    "package": "pkg:cran/sdcMicro",
                    "versions": [{"introduced": "5.0.0", "fixed": "5.6.1"}],
                }
            ]
        },
        "vulnerabilities": [
            {
                "cve": "CVE-FIX-0002",
                "severity": "medium",
                "notes": [{"category": "description", "text": "localSuppression can leave unique keys"}],
                "remediations": [{"details": "upgrade to 5.6.1"}],
            }
        ],
    }
    out = HERE / "feeds"
    (out / "osv.json").write_text(json.dumps(osv, indent=2) + "\n")
    (out / "nvd.json").write_text(json.dumps(nvd, indent=2) + "\n")
    (out / "csaf-tre-2025-0007.json").write_text(json.dumps(csaf, indent=2) + "\n")


MAIN_WORKLOADS = ["anonymisation-sdc", "etl-merge", "logit-glm", "late-bind-heavy", "gpu-late-bind"]


def registries():
    """Registry profiles for replay: tre-a offers everything the main
    workloads need, tre-b lacks one late-bound package and tre-c serves one
    declared package with a different digest."""
    catalogue = {}
    for name in MAIN_WORKLOADS:
        lines = (HERE / "workloads" / f"{name}.jsonl").read_text().splitlines()
        header = json.loads(lines[0])
        for c in header["declared_components"] + header["installed"]:
            catalogue[c["purl"]] = c
    full = [catalogue[p] for p in sorted(catalogue)]
    logit = json.loads((HERE / "workloads" / "logit-glm.jsonl").read_text().splitlines()[0])
    dropped = logit["installed"][0]["purl"]
    altered = logit["declared_components"][0]["purl"]
    tre_b = [c for c in full if c["purl"] != dropped]
    tre_c = [dict(c, hashes={"SHA-256": sha(c["purl"] + "|rebuilt")}) if c["purl"] == altered else c for c in full]
    for profile, packages in [("tre-a", full), ("tre-b", tre_b), ("tre-c", tre_c)]:
        out = HERE / "registries" / profile
        out.mkdir(parents=True, exist_ok=True)
        (out / "packages.json").write_text(json.dumps(packages, indent=2) + "\n")


if __name__ == "__main__":
    (HERE / "workloads").mkdir(exist_ok=True)
    (HERE / "feeds").mkdir(exist_ok=True)
    anonymisation_sdc()
    etl_merge()
    logit_glm()
    late_bind_heavy()
    gpu_late_bind()
    missing_components()
    probe_unresolvable()
    tampered_hash()
    feeds()
    registries()
