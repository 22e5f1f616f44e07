"""privflow: privacy-preserving smart meter data collection and model-free
power flow estimation.

Submodules:

* ``feeder``    - network models, admittance, Newton-Raphson power flow,
                  synthetic load profiles, measurement noise
* ``randomize`` - per-meter sigmoid randomization of power readings
* ``pedersen``  - Pedersen commitments and the sigma-protocol round
* ``wire``      - framed message codec and transports
* ``collect``   - voltage splitting, decoy embedding, the index handshake,
                  and dataset collection between meters and the operator
* ``estimator`` - six-layer network voltage estimator with AdamW training
* ``drift``     - Wasserstein drift indicator and incremental model updates
* ``pipeline``  - staged end-to-end runs with manifests
* ``cli``       - command line front end over the pipeline
"""

__version__ = "0.1.0"
