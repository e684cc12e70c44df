"""RL agents: DDQN, TD3, A2C and PPO, each with an MLP or VQC approximator."""
from .base import ALGORITHMS, APPROXIMATORS, Agent, AgentConfig, ReplayConfig
from .ddqn import DDQNAgent, ddqn_target, ddqn_train_step, sync_target
from .exploration import ExplorationSchedule, masked_argmax, select_action
from .policy import A2CAgent, PPOAgent, a2c_loss, gae, ppo_loss, ppo_surrogate
from .td3 import TD3Agent, clipped_noise, discretize_td3_action, td3_target, td3_train_step

AGENT_CLASSES = {"DDQN": DDQNAgent, "TD3": TD3Agent, "A2C": A2CAgent, "PPO": PPOAgent}


def make_agent(obs_dim, n_actions, config: AgentConfig, **kw) -> Agent:
    return AGENT_CLASSES[config.algorithm](obs_dim, n_actions, config, **kw)


def display_name(algorithm: str, approximator: str) -> str:
    """Label such as PERDDQN or PERQDDQN."""
    return "PER" + ("Q" if approximator == "quantum" else "") + algorithm
