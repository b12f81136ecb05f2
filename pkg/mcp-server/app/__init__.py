"""MCP server exposing latent-IMH experiments as tools"""
