"""Friction-aware ballbot simulation, learning and control toolkit."""

from .actuator import ActuatorParams, effective_torque, identify_friction
from .contact import ContactPoint, FrictionSpec, ImpedanceSpec, detect_contacts, friction_forces, normal_force
from .dynamics import (
    BallbotModel,
    NumericDivergenceError,
    SimState,
    static_equilibrium_state,
    upright_state,
    virtual_joint_wrench,
    wheel_ball_jacobian,
)
from .params import (
    BodyParams,
    UpperBodyConfig,
    UpperBodyLayout,
    VirtualJointParams,
    compose_upper_body_inertia,
    default_body_params,
)
from .sensing import SensorNoiseSpec, estimate_body_velocity, read_proprioception, read_world_pose

__version__ = "0.1.0"
