from prometheus_client import Counter, Gauge

# Coupled solves by terminal status
SOLVES = Counter(
    'cvhi_solves_total',
    'Coupled solves by terminal status',
    ['status']
)

# Inner iteration-map steps
INNER_ITERATIONS = Counter(
    'cvhi_inner_iterations_total',
    'Inner iteration-map steps',
    ['inequality']
)

# Primal-gap certificates evaluated / failed
CERTIFICATES = Counter(
    'cvhi_certificates_total',
    'Primal-gap certificates evaluated',
    ['inequality']
)
CERTIFICATE_FAILURES = Counter(
    'cvhi_certificate_failures_total',
    'Certificates that did not meet their tolerance',
    ['inequality']
)

# Oracle grid nodes screened
ORACLE_NODES = Counter(
    'cvhi_oracle_nodes_total',
    'Oracle grid nodes screened',
    ['stage']
)

# Busy workers per pool
ACTIVE_WORKERS = Gauge(
    'cvhi_active_workers',
    'Busy workers per pool',
    ['pool']
)
